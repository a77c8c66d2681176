#pragma once

// Versioned binary container for trained models.
//
//   "TTMODEL1" | u32 version | u32 kind | u64 arity
//   | u64 len | params JSON | u64 len | payload | u32 CRC32 of all prior bytes
//
// Integers and doubles are little-endian; doubles are stored bit-exactly.

#include <bit>
#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "turbotest/core.hpp"
#include "turbotest/learn/gbdt.hpp"
#include "turbotest/learn/mlp.hpp"
#include "turbotest/util.hpp"

namespace turbotest::learn {

static_assert(std::endian::native == std::endian::little, "model files assume a little-endian host");

inline constexpr std::string_view kModelMagic = "TTMODEL1";
inline constexpr std::uint32_t kModelVersion = 1;

enum class ModelKind : std::uint32_t { kGbdt = 1, kMlp = 2 };

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void put_bytes(std::string_view s) {
    put<std::uint64_t>(s.size());
    buf_.append(s);
  }
  void put_doubles(const double* p, std::size_t n) {
    put<std::uint64_t>(n);
    buf_.append(reinterpret_cast<const char*>(p), n * sizeof(double));
  }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view s) : s_(s) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, s_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string get_bytes() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string out(s_.substr(pos_, n));
    pos_ += n;
    return out;
  }
  std::vector<double> get_doubles() {
    const auto n = get<std::uint64_t>();
    if (n > (s_.size() - pos_) / sizeof(double)) throw ModelError("model payload truncated");
    std::vector<double> out(n);
    std::memcpy(out.data(), s_.data() + pos_, n * sizeof(double));
    pos_ += n * sizeof(double);
    return out;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (n > s_.size() - pos_) throw ModelError("model payload truncated");
  }
  std::string_view s_;
  std::size_t pos_ = 0;
};

inline nlohmann::json to_json(const GbdtParams& p) {
  return {{"max_depth", p.max_depth},       {"n_trees", p.n_trees},     {"learning_rate", p.learning_rate},
          {"min_samples_leaf", p.min_samples_leaf}, {"subsample", p.subsample}, {"l2", p.l2},
          {"objective", objective_name(p.objective)}, {"rel_gamma", p.rel_gamma}, {"seed", p.seed}};
}

inline nlohmann::json to_json(const MlpParams& p) {
  return {{"hidden", p.hidden},   {"learning_rate", p.learning_rate}, {"batch_size", p.batch_size},
          {"epochs", p.epochs},   {"dropout", p.dropout},             {"weight_decay", p.weight_decay},
          {"pos_weight", p.pos_weight}, {"seed", p.seed}};
}

inline std::string encode(ModelKind kind, std::size_t arity, const nlohmann::json& params, const std::string& payload) {
  ByteWriter w;
  w.str().append(kModelMagic);
  w.put<std::uint32_t>(kModelVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(kind));
  w.put<std::uint64_t>(arity);
  w.put_bytes(params.dump());
  w.put_bytes(payload);
  const std::uint32_t crc = crc32_of(w.str());
  w.put<std::uint32_t>(crc);
  return std::move(w.str());
}

struct Container {
  ModelKind kind;
  std::size_t arity;
  nlohmann::json params;
  std::string payload;
};

inline Container decode(std::string_view bytes, const std::string& origin) {
  if (bytes.size() < kModelMagic.size() + 4 + 4 + 8 + 8 + 8 + 4) throw ModelError(origin + ": model file truncated");
  if (bytes.substr(0, kModelMagic.size()) != kModelMagic) throw ModelError(origin + ": not a model file (bad magic)");
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + bytes.size() - 4, 4);
  if (crc32_of(bytes.substr(0, bytes.size() - 4)) != stored) {
    throw ModelError(origin + ": checksum mismatch (file corrupt or truncated)");
  }
  ByteReader r(bytes.substr(kModelMagic.size(), bytes.size() - 4 - kModelMagic.size()));
  const auto version = r.get<std::uint32_t>();
  if (version != kModelVersion) {
    throw ModelError(origin + ": unsupported model format version " + std::to_string(version) + " (expected " +
                     std::to_string(kModelVersion) + ")");
  }
  Container c;
  c.kind = static_cast<ModelKind>(r.get<std::uint32_t>());
  c.arity = r.get<std::uint64_t>();
  c.params = nlohmann::json::parse(r.get_bytes());
  c.payload = r.get_bytes();
  if (!r.done()) throw ModelError(origin + ": trailing bytes in model file");
  return c;
}

inline void expect(const Container& c, ModelKind kind, std::optional<std::size_t> arity, const std::string& origin) {
  if (c.kind != kind) {
    throw ModelError(origin + ": expected a " + std::string(kind == ModelKind::kGbdt ? "gbdt" : "mlp") + " model");
  }
  if (arity && c.arity != *arity) {
    throw ModelError(origin + ": model arity " + std::to_string(c.arity) + " does not match expected arity " +
                     std::to_string(*arity));
  }
}

}  // namespace detail

inline std::string serialize(const GbdtModel& m) {
  detail::ByteWriter w;
  w.put<double>(m.base_prediction);
  w.put<double>(m.learning_rate);
  w.put<std::uint64_t>(m.trees.size());
  for (const Tree& t : m.trees) {
    w.put<std::uint64_t>(t.size());
    for (const TreeNode& n : t) {
      w.put<std::int32_t>(n.feature);
      w.put<double>(n.threshold);
      w.put<std::int32_t>(n.left);
      w.put<std::int32_t>(n.right);
      w.put<double>(n.value);
    }
  }
  w.put_doubles(m.train_mse.data(), m.train_mse.size());
  return detail::encode(ModelKind::kGbdt, m.n_features, detail::to_json(m.params), w.str());
}

inline std::string serialize(const MlpModel& m) {
  detail::ByteWriter w;
  w.put<std::uint64_t>(m.weights.size());
  for (std::size_t l = 0; l < m.weights.size(); ++l) {
    const RowMatrix rm = m.weights[l];
    w.put<std::uint64_t>(static_cast<std::uint64_t>(rm.rows()));
    w.put<std::uint64_t>(static_cast<std::uint64_t>(rm.cols()));
    w.put_doubles(rm.data(), static_cast<std::size_t>(rm.size()));
    w.put_doubles(m.biases[l].data(), static_cast<std::size_t>(m.biases[l].size()));
  }
  w.put_doubles(m.input_mean.data(), static_cast<std::size_t>(m.input_mean.size()));
  w.put_doubles(m.input_scale.data(), static_cast<std::size_t>(m.input_scale.size()));
  w.put_doubles(m.loss_curve.data(), m.loss_curve.size());
  return detail::encode(ModelKind::kMlp, m.n_inputs, detail::to_json(m.params), w.str());
}

inline GbdtModel deserialize_gbdt(std::string_view bytes, const std::string& origin = "model",
                                  std::optional<std::size_t> arity = std::nullopt) {
  const detail::Container c = detail::decode(bytes, origin);
  detail::expect(c, ModelKind::kGbdt, arity, origin);
  GbdtModel m;
  m.n_features = c.arity;
  const auto& p = c.params;
  m.params.max_depth = p.at("max_depth").get<int>();
  m.params.n_trees = p.at("n_trees").get<int>();
  m.params.learning_rate = p.at("learning_rate").get<double>();
  m.params.min_samples_leaf = p.at("min_samples_leaf").get<int>();
  m.params.subsample = p.at("subsample").get<double>();
  m.params.l2 = p.at("l2").get<double>();
  m.params.objective = parse_objective(p.at("objective").get<std::string>());
  m.params.rel_gamma = p.at("rel_gamma").get<double>();
  m.params.seed = p.at("seed").get<std::uint64_t>();
  detail::ByteReader r(c.payload);
  m.base_prediction = r.get<double>();
  m.learning_rate = r.get<double>();
  const auto n_trees = r.get<std::uint64_t>();
  for (std::uint64_t t = 0; t < n_trees; ++t) {
    Tree tree(r.get<std::uint64_t>());
    for (TreeNode& n : tree) {
      n.feature = r.get<std::int32_t>();
      n.threshold = r.get<double>();
      n.left = r.get<std::int32_t>();
      n.right = r.get<std::int32_t>();
      n.value = r.get<double>();
      if (n.feature >= 0 && (static_cast<std::size_t>(n.feature) >= m.n_features || n.left < 0 || n.right < 0 ||
                             static_cast<std::size_t>(n.left) >= tree.size() ||
                             static_cast<std::size_t>(n.right) >= tree.size())) {
        throw ModelError(origin + ": malformed tree node");
      }
    }
    if (tree.empty()) throw ModelError(origin + ": empty tree");
    m.trees.push_back(std::move(tree));
  }
  m.train_mse = r.get_doubles();
  if (!r.done()) throw ModelError(origin + ": trailing payload bytes");
  return m;
}

inline MlpModel deserialize_mlp(std::string_view bytes, const std::string& origin = "model",
                                std::optional<std::size_t> arity = std::nullopt) {
  const detail::Container c = detail::decode(bytes, origin);
  detail::expect(c, ModelKind::kMlp, arity, origin);
  MlpModel m;
  m.n_inputs = c.arity;
  const auto& p = c.params;
  m.params.hidden = p.at("hidden").get<std::vector<int>>();
  m.params.learning_rate = p.at("learning_rate").get<double>();
  m.params.batch_size = p.at("batch_size").get<int>();
  m.params.epochs = p.at("epochs").get<int>();
  m.params.dropout = p.at("dropout").get<double>();
  m.params.weight_decay = p.at("weight_decay").get<double>();
  m.params.pos_weight = p.at("pos_weight").get<double>();
  m.params.seed = p.at("seed").get<std::uint64_t>();
  detail::ByteReader r(c.payload);
  const auto layers = r.get<std::uint64_t>();
  auto expected_in = static_cast<Eigen::Index>(m.n_inputs);
  for (std::uint64_t l = 0; l < layers; ++l) {
    const auto rows = static_cast<Eigen::Index>(r.get<std::uint64_t>());
    const auto cols = static_cast<Eigen::Index>(r.get<std::uint64_t>());
    const std::vector<double> w = r.get_doubles();
    const std::vector<double> b = r.get_doubles();
    if (cols != expected_in || static_cast<Eigen::Index>(w.size()) != rows * cols ||
        static_cast<Eigen::Index>(b.size()) != rows) {
      throw ModelError(origin + ": inconsistent layer shapes");
    }
    m.weights.push_back(Eigen::Map<const RowMatrix>(w.data(), rows, cols));
    m.biases.push_back(Eigen::Map<const Eigen::VectorXd>(b.data(), rows));
    expected_in = rows;
  }
  if (layers == 0 || expected_in != 1) throw ModelError(origin + ": network must end in a single output");
  const std::vector<double> mean = r.get_doubles();
  const std::vector<double> scale = r.get_doubles();
  if (mean.size() != m.n_inputs || scale.size() != m.n_inputs) throw ModelError(origin + ": bad input transform");
  m.input_mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
  m.input_scale = Eigen::Map<const Eigen::VectorXd>(scale.data(), static_cast<Eigen::Index>(scale.size()));
  m.loss_curve = r.get_doubles();
  if (!r.done()) throw ModelError(origin + ": trailing payload bytes");
  return m;
}

inline void save_model(const std::string& path, const GbdtModel& m) { write_file(path, serialize(m)); }
inline void save_model(const std::string& path, const MlpModel& m) { write_file(path, serialize(m)); }

inline GbdtModel load_gbdt(const std::string& path, std::optional<std::size_t> arity = kRegressorArity) {
  return deserialize_gbdt(read_file(path), path, arity);
}

inline MlpModel load_mlp(const std::string& path, std::optional<std::size_t> arity = kClassifierArity) {
  return deserialize_mlp(read_file(path), path, arity);
}

}  // namespace turbotest::learn
