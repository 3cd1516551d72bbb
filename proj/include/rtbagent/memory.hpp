#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "rtbagent/common.hpp"

namespace rtb {

enum class MemoryKind { Env, Bid, Ref };

std::string to_string(MemoryKind k);
MemoryKind parse_memory_kind(std::string_view s);

struct MemoryEntry {
  MemoryKind kind = MemoryKind::Env;
  std::int64_t day = 0;
  /// Absent for daily reflections.
  std::optional<int> step;
  nlohmann::json payload;
  std::uint64_t seq = 0;

  nlohmann::json to_json() const;
  static MemoryEntry from_json(const nlohmann::json& j);
  friend bool operator==(const MemoryEntry&, const MemoryEntry&) = default;
};

struct RetrievalScope {
  int recent_steps = 6;
  bool include_yesterday_reflection = true;
  std::size_t max_entries = 24;
};

/// (day, step) position of the decision being made.
struct MemoryClock {
  std::int64_t day = 0;
  int step = 0;
};

class KindMismatch : public Error {
 public:
  using Error::Error;
};

class CorruptLine : public Error {
 public:
  CorruptLine(std::size_t line, const std::string& what)
      : Error("memory line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// Append-only store of one memory kind. Optionally journals each append to a
/// JSON-lines file as it happens.
class MemoryStore {
 public:
  explicit MemoryStore(MemoryKind kind) : kind_(kind) {}

  /// Opens a journal at `path` (truncating it); subsequent appends are
  /// written and flushed immediately.
  void journal_to(const std::filesystem::path& path);

  MemoryKind kind() const { return kind_; }
  std::uint64_t append(MemoryEntry entry);
  const std::vector<MemoryEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Same-day entries with step in [now.step - recent_steps, now.step), oldest
  /// first, plus (reflection store only) the latest prior day's reflections.
  /// At most max_entries, keeping the most recent.
  std::vector<MemoryEntry> retrieve(const RetrievalScope& scope, const MemoryClock& now) const;

  /// Every entry recorded for `day`.
  std::vector<MemoryEntry> day_entries(std::int64_t day) const;

  void persist(const std::filesystem::path& path) const;
  static MemoryStore load(const std::filesystem::path& path, MemoryKind kind);

  friend bool operator==(const MemoryStore& a, const MemoryStore& b) {
    return a.kind_ == b.kind_ && a.entries_ == b.entries_;
  }

 private:
  MemoryKind kind_;
  std::vector<MemoryEntry> entries_;
  std::unique_ptr<std::ofstream> journal_;
};

/// The agent's three stores.
struct MemorySet {
  MemoryStore env{MemoryKind::Env};
  MemoryStore bid{MemoryKind::Bid};
  MemoryStore ref{MemoryKind::Ref};

  MemoryStore& operator[](MemoryKind k);
  const MemoryStore& operator[](MemoryKind k) const;

  /// memory_{env,bid,ref}.jsonl under `dir`.
  void journal_to(const std::filesystem::path& dir);
};

}  // namespace rtb
