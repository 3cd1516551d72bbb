#include "rtbagent/memory.hpp"

#include <algorithm>

namespace rtb {

std::string to_string(MemoryKind k) {
  switch (k) {
    case MemoryKind::Env:
      return "env";
    case MemoryKind::Bid:
      return "bid";
    case MemoryKind::Ref:
      return "ref";
  }
  return "?";
}

MemoryKind parse_memory_kind(std::string_view s) {
  if (s == "env") return MemoryKind::Env;
  if (s == "bid") return MemoryKind::Bid;
  if (s == "ref") return MemoryKind::Ref;
  throw Error("unknown memory kind '" + std::string(s) + "'");
}

nlohmann::json MemoryEntry::to_json() const {
  nlohmann::json j = {{"seq", seq}, {"kind", to_string(kind)}, {"day", day}};
  if (step) j["step"] = *step;
  j["payload"] = payload;
  return j;
}

MemoryEntry MemoryEntry::from_json(const nlohmann::json& j) {
  MemoryEntry e;
  e.seq = j.at("seq").get<std::uint64_t>();
  e.kind = parse_memory_kind(j.at("kind").get<std::string>());
  e.day = j.at("day").get<std::int64_t>();
  if (j.contains("step") && !j["step"].is_null()) e.step = j["step"].get<int>();
  e.payload = j.at("payload");
  return e;
}

void MemoryStore::journal_to(const std::filesystem::path& path) {
  journal_ = std::make_unique<std::ofstream>(path, std::ios::binary | std::ios::trunc);
  if (!*journal_) throw Error("cannot open memory journal " + path.string());
  for (const auto& e : entries_) *journal_ << e.to_json().dump() << '\n';
  journal_->flush();
}

std::uint64_t MemoryStore::append(MemoryEntry entry) {
  if (entry.kind != kind_) {
    throw KindMismatch("cannot append a " + to_string(entry.kind) + " entry to the " +
                       to_string(kind_) + " store");
  }
  entry.seq = entries_.empty() ? 1 : entries_.back().seq + 1;
  if (journal_) {
    *journal_ << entry.to_json().dump() << '\n';
    journal_->flush();
  }
  entries_.push_back(std::move(entry));
  return entries_.back().seq;
}

std::vector<MemoryEntry> MemoryStore::retrieve(const RetrievalScope& scope,
                                               const MemoryClock& now) const {
  std::vector<MemoryEntry> out;
  if (kind_ == MemoryKind::Ref && scope.include_yesterday_reflection) {
    std::optional<std::int64_t> latest;
    for (const auto& e : entries_) {
      if (!e.step && e.day < now.day && (!latest || e.day > *latest)) latest = e.day;
    }
    if (latest) {
      for (const auto& e : entries_) {
        if (!e.step && e.day == *latest) out.push_back(e);
      }
    }
  }
  const int lo = now.step - std::max(scope.recent_steps, 0);
  for (const auto& e : entries_) {
    if (e.day == now.day && e.step && *e.step >= lo && *e.step < now.step) out.push_back(e);
  }
  if (out.size() > scope.max_entries) {
    out.erase(out.begin(), out.end() - static_cast<std::ptrdiff_t>(scope.max_entries));
  }
  return out;
}

std::vector<MemoryEntry> MemoryStore::day_entries(std::int64_t day) const {
  std::vector<MemoryEntry> out;
  std::copy_if(entries_.begin(), entries_.end(), std::back_inserter(out),
               [&](const auto& e) { return e.day == day; });
  return out;
}

void MemoryStore::persist(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& e : entries_) out << e.to_json().dump() << '\n';
  if (!out) throw Error("failed writing " + path.string());
}

MemoryStore MemoryStore::load(const std::filesystem::path& path, MemoryKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  MemoryStore store(kind);
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    MemoryEntry e;
    try {
      e = MemoryEntry::from_json(nlohmann::json::parse(line));
    } catch (const std::exception& ex) {
      throw CorruptLine(n, ex.what());
    }
    if (e.kind != kind) throw CorruptLine(n, "entry kind " + to_string(e.kind) + " in " + to_string(kind) + " store");
    const std::uint64_t expected = store.entries_.empty() ? 1 : store.entries_.back().seq + 1;
    if (e.seq != expected) {
      throw CorruptLine(n, "sequence " + std::to_string(e.seq) + ", expected " + std::to_string(expected));
    }
    store.entries_.push_back(std::move(e));
  }
  return store;
}

MemoryStore& MemorySet::operator[](MemoryKind k) {
  switch (k) {
    case MemoryKind::Env:
      return env;
    case MemoryKind::Bid:
      return bid;
    case MemoryKind::Ref:
      break;
  }
  return ref;
}

const MemoryStore& MemorySet::operator[](MemoryKind k) const {
  return const_cast<MemorySet&>(*this)[k];
}

void MemorySet::journal_to(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  env.journal_to(dir / "memory_env.jsonl");
  bid.journal_to(dir / "memory_bid.jsonl");
  ref.journal_to(dir / "memory_ref.jsonl");
}

}  // namespace rtb
