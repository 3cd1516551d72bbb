#include "rtbagent/ctr.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace rtb {

namespace {

constexpr char kMagic[6] = {'R', 'T', 'B', 'F', 'M', '\0'};
constexpr std::uint32_t kFormatVersion = 1;

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// splitmix64 finalizer, spreads FNV's weak low bits
std::uint64_t mix(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  static_assert(std::endian::native == std::endian::little, "model files are little-endian");
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("model file truncated");
  return v;
}

}  // namespace

FeatureIndexer::FeatureIndexer(int bits, std::uint64_t seed) : bits_(bits), seed_(seed) {
  if (bits < 1 || bits > 30) throw InvalidParams("hash bits must be in [1, 30]");
}

std::uint32_t FeatureIndexer::index(std::string_view field, std::string_view value) const {
  std::uint64_t h = fnv1a(field, 0xcbf29ce484222325ULL ^ mix(seed_));
  h = fnv1a("=", h);
  h = fnv1a(value, h);
  return static_cast<std::uint32_t>(mix(h) & (dimension() - 1));
}

std::uint32_t FeatureIndexer::index(std::string_view token) const {
  const auto eq = token.find('=');
  if (eq == std::string_view::npos) return index(token, {});
  return index(token.substr(0, eq), token.substr(eq + 1));
}

std::vector<std::uint32_t> encode(const ImpressionEvent& event, const FeatureIndexer& indexer) {
  std::vector<std::uint32_t> out;
  out.reserve(event.features.size());
  for (const auto& [field, value] : event.features) out.push_back(indexer.index(field, value));
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw InvalidParams("ctr.epochs must be >= 1");
  if (!(learning_rate > 0)) throw InvalidParams("ctr.learning_rate must be > 0");
  if (k < 1) throw InvalidParams("ctr.k must be >= 1");
  if (!(init_sigma >= 0) || !(l2_linear >= 0) || !(l2_factor >= 0)) {
    throw InvalidParams("ctr: regularization and init_sigma must be >= 0");
  }
}

nlohmann::json TrainConfig::to_json() const {
  return {{"epochs", epochs},       {"learning_rate", learning_rate}, {"l2_linear", l2_linear},
          {"l2_factor", l2_factor}, {"k", k},                         {"init_sigma", init_sigma},
          {"rng_seed", rng_seed}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.l2_linear = j.value("l2_linear", c.l2_linear);
  c.l2_factor = j.value("l2_factor", c.l2_factor);
  c.k = j.value("k", c.k);
  c.init_sigma = j.value("init_sigma", c.init_sigma);
  c.rng_seed = j.value("rng_seed", c.rng_seed);
  c.validate();
  return c;
}

double predict(const FMModel& model, std::span<const std::uint32_t> indices) {
  return model.predict(indices);
}

FMModel train(std::span<const ImpressionEvent> events, const TrainConfig& config,
              const FeatureIndexer& indexer) {
  config.validate();
  FMModel model(indexer, config.k);
  model.config = config;
  Rng rng(config.rng_seed);

  auto& v = model.fm.v();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) v(r, c) = rng.normal(0.0, config.init_sigma);
  }
  if (events.empty()) {
    model.final_log_loss = 0;
    return model;
  }

  std::vector<std::vector<std::uint32_t>> encoded;
  encoded.reserve(events.size());
  for (const auto& e : events) encoded.push_back(encode(e, indexer));

  std::vector<std::size_t> order(events.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  const double lr = config.learning_rate;
  auto& w = model.fm.w();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.below(i)]);
    }
    double epoch_loss = 0;
    for (std::size_t n : order) {
      const auto& x = encoded[n];
      const int y = events[n].click;
      epoch_loss += model.fm.loss(x, y);
      const auto g = model.fm.gradient(x, y);
      model.fm.w0() -= lr * g.w0;
      for (std::size_t r = 0; r < g.index.size(); ++r) {
        const auto j = g.index[r];
        const auto ri = static_cast<Eigen::Index>(r);
        w[j] -= lr * (g.w[ri] + config.l2_linear * w[j]);
        v.row(j) -= lr * (g.v.row(ri) + config.l2_factor * v.row(j));
      }
    }
    if (!std::isfinite(epoch_loss) || !std::isfinite(model.fm.w0())) {
      throw NumericalDivergence("FM training diverged in epoch " + std::to_string(epoch + 1) +
                                ": mean loss " + std::to_string(epoch_loss / order.size()) +
                                ", w0 " + std::to_string(model.fm.w0()) +
                                " (try a smaller learning rate)");
    }
  }

  double total = 0;
  for (std::size_t n = 0; n < encoded.size(); ++n) total += model.fm.loss(encoded[n], events[n].click);
  model.final_log_loss = total / static_cast<double>(encoded.size());
  if (!std::isfinite(model.final_log_loss) || !model.fm.all_finite()) {
    throw NumericalDivergence("FM training produced non-finite parameters");
  }
  return model;
}

std::vector<double> predict_all(const FMModel& model, std::span<const ImpressionEvent> events) {
  std::vector<double> out;
  out.reserve(events.size());
  for (const auto& e : events) out.push_back(model.predict(e));
  return out;
}

double mean_train_ctr(const FMModel& model, std::span<const ImpressionEvent> events) {
  if (events.empty()) return 0.0;
  double sum = 0;
  for (const auto& e : events) sum += model.predict(e);
  return sum / static_cast<double>(events.size());
}

void save_model(const FMModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write model " + path.string());
  const nlohmann::json header = {{"format", "rtbagent-fm"},
                                 {"version", kFormatVersion},
                                 {"hash_bits", model.indexer.bits()},
                                 {"hash_seed", model.indexer.seed()},
                                 {"dimension", model.fm.dimension()},
                                 {"k", model.fm.k()},
                                 {"final_log_loss", model.final_log_loss},
                                 {"train_config", model.config.to_json()}};
  const std::string text = header.dump();
  out.write(kMagic, sizeof kMagic);
  write_pod(out, kFormatVersion);
  write_pod(out, static_cast<std::uint64_t>(text.size()));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_pod(out, model.fm.w0());
  out.write(reinterpret_cast<const char*>(model.fm.w().data()),
            static_cast<std::streamsize>(sizeof(double) * model.fm.w().size()));
  out.write(reinterpret_cast<const char*>(model.fm.v().data()),
            static_cast<std::streamsize>(sizeof(double) * model.fm.v().size()));
  if (!out) throw Error("failed writing model " + path.string());
}

FMModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open model " + path.string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw Error(path.string() + " is not an FM model file");
  }
  if (read_pod<std::uint32_t>(in) != kFormatVersion) throw Error("unsupported model format version");
  const auto len = read_pod<std::uint64_t>(in);
  if (len > (1u << 20)) throw Error("model header too large");
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);

  FeatureIndexer idx(header.at("hash_bits").get<int>(), header.at("hash_seed").get<std::uint64_t>());
  FMModel model(idx, header.at("k").get<int>());
  model.config = TrainConfig::from_json(header.at("train_config"));
  model.final_log_loss = header.value("final_log_loss", 0.0);
  model.fm.w0() = read_pod<double>(in);
  in.read(reinterpret_cast<char*>(model.fm.w().data()),
          static_cast<std::streamsize>(sizeof(double) * model.fm.w().size()));
  in.read(reinterpret_cast<char*>(model.fm.v().data()),
          static_cast<std::streamsize>(sizeof(double) * model.fm.v().size()));
  if (!in) throw Error("model file truncated");
  return model;
}

}  // namespace rtb
