#pragma once

// Checkpoint and certificate files (JSON, matrices as hex-encoded
// little-endian float64 blobs, column-major), the problem hash, and the
// training-log CSV.

#include "ncc/certify.hpp"
#include "ncc/problem.hpp"
#include "ncc/train.hpp"

#include "json.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace ncc {

using Json = nlohmann::json;

inline constexpr int kSchemaMajor = 1;
inline constexpr int kSchemaMinor = 0;
inline const std::string kSchemaVersion = std::to_string(kSchemaMajor) + "." + std::to_string(kSchemaMinor);

struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Encoding helpers

namespace detail {

inline void append_le(std::string& out, double v) {
  static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int k = 0; k < 8; ++k) {
    out.push_back(static_cast<char>(bits & 0xffU));
    bits >>= 8;
  }
}

inline std::string to_hex(const std::string& bytes) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(bytes.size() * 2);
  for (unsigned char c : bytes) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0x0f]);
  }
  return out;
}

inline int hex_digit(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c >= 'a' && c <= 'f') return c - 'a' + 10;
  if (c >= 'A' && c <= 'F') return c - 'A' + 10;
  throw FormatError("invalid hex digit");
}

}  // namespace detail

inline Json encode_matrix(const Matrix& m) {
  std::string bytes;
  bytes.reserve(static_cast<std::size_t>(m.size()) * 8);
  for (Eigen::Index k = 0; k < m.size(); ++k) detail::append_le(bytes, m.data()[k]);
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", detail::to_hex(bytes)}};
}

inline Matrix decode_matrix(const Json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto& hex = j.at("data").get_ref<const std::string&>();
  if (rows < 0 || cols < 0 || hex.size() != static_cast<std::size_t>(rows * cols) * 16) {
    throw FormatError("matrix blob has " + std::to_string(hex.size()) + " hex digits, expected " +
                      std::to_string(rows * cols * 16));
  }
  Matrix m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) {
    std::uint64_t bits = 0;
    for (int b = 7; b >= 0; --b) {
      const std::size_t pos = static_cast<std::size_t>(k) * 16 + static_cast<std::size_t>(b) * 2;
      bits = (bits << 8) | static_cast<std::uint64_t>(detail::hex_digit(hex[pos]) * 16 + detail::hex_digit(hex[pos + 1]));
    }
    m.data()[k] = std::bit_cast<double>(bits);
  }
  return m;
}

inline Json encode_mlp(const MlpParams& net) {
  Json layers = Json::array();
  for (const auto& l : net.layers) layers.push_back({{"weight", encode_matrix(l.weight)}, {"bias", encode_matrix(l.bias)}});
  return {{"activation", "softplus"}, {"layers", layers}};
}

inline MlpParams decode_mlp(const Json& j) {
  if (j.value("activation", "softplus") != "softplus") throw FormatError("unsupported activation");
  MlpParams net;
  for (const auto& l : j.at("layers")) {
    const Matrix bias = decode_matrix(l.at("bias"));
    if (bias.cols() != 1) throw FormatError("bias must be a column vector");
    net.layers.push_back({decode_matrix(l.at("weight")), Vector(bias.col(0))});
  }
  net.validate();
  return net;
}

inline Json encode_region(const Region& r) {
  Json lo = Json::array();
  Json hi = Json::array();
  for (const auto& iv : r.box()) {
    lo.push_back(iv.lo());
    hi.push_back(iv.hi());
  }
  return {{"lo", lo}, {"hi", hi}, {"partition", r.partition()}};
}

inline Region decode_region(const Json& j) {
  const auto lo = j.at("lo").get<std::vector<double>>();
  const auto hi = j.at("hi").get<std::vector<double>>();
  if (lo.size() != hi.size()) throw FormatError("region lo/hi lengths differ");
  IntervalVector box;
  for (std::size_t k = 0; k < lo.size(); ++k) box.emplace_back(lo[k], hi[k]);
  return {box, j.at("partition").get<std::vector<int>>()};
}

inline void check_schema(const Json& j, const std::string& kind) {
  if (!j.contains("schema_version")) throw FormatError(kind + ": missing schema_version");
  const auto v = j.at("schema_version").get<std::string>();
  const int major = std::stoi(v.substr(0, v.find('.')));
  if (major != kSchemaMajor) throw FormatError(kind + ": unsupported schema major version " + v);
  if (j.value("kind", "") != kind) throw FormatError("file is not a " + kind);
}

// ---------------------------------------------------------------------------
// Problem hash: SHA-256 over the system name, hyperparameters, and every
// parameter and structural matrix, in a fixed order.

inline std::string problem_hash(const ContractionProblem& p) {
  std::string bytes = p.system->name();
  bytes.push_back('\0');
  for (double v : {p.a, p.b, p.c}) detail::append_le(bytes, v);
  auto put = [&](const Matrix& m) {
    detail::append_le(bytes, static_cast<double>(m.rows()));
    detail::append_le(bytes, static_cast<double>(m.cols()));
    for (Eigen::Index k = 0; k < m.size(); ++k) detail::append_le(bytes, m.data()[k]);
  };
  detail::visit_parameters(p, [&](const ParameterBlock&, const auto& m) { put(m); });
  put(p.policy.x_eq);
  put(p.policy.u_eq);
  put(p.metric.projection);

  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("problem_hash: SHA-256 failed");
  }
  return detail::to_hex(std::string(reinterpret_cast<const char*>(digest), len));
}

// ---------------------------------------------------------------------------
// Checkpoints

struct Checkpoint {
  ContractionProblem problem;
  Region region;  // the full training region
  int stage = 0;
  std::int64_t step = 0;
  std::uint64_t seed = 0;
  std::string config_text;  // the run configuration, verbatim
  std::string rng_state;
  Vector adam_m;
  Vector adam_v;
  std::int64_t adam_t = 0;
};

inline Json checkpoint_to_json(const Checkpoint& c) {
  const ContractionProblem& p = c.problem;
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "checkpoint";
  j["system"] = p.system->name();
  j["packing_order"] = kPackingOrder;
  j["hyperparameters"] = {{"a", p.a}, {"b", p.b}, {"c", p.c}};
  j["policy"] = {{"gain", encode_matrix(p.policy.gain)},
                 {"x_eq", encode_matrix(p.policy.x_eq)},
                 {"u_eq", encode_matrix(p.policy.u_eq)},
                 {"residual", encode_mlp(p.policy.residual)}};
  j["metric"] = {{"warm_start", encode_matrix(p.metric.warm_start)},
                 {"projection", encode_matrix(p.metric.projection)},
                 {"residual", encode_mlp(p.metric.residual)}};
  j["region"] = encode_region(c.region);
  j["stage"] = c.stage;
  j["step"] = c.step;
  j["seed"] = c.seed;
  j["rng_state"] = c.rng_state;
  j["config"] = c.config_text;
  j["problem_hash"] = problem_hash(p);
  if (c.adam_m.size() != 0) {
    j["optimizer"] = {{"m", encode_matrix(c.adam_m)}, {"v", encode_matrix(c.adam_v)}, {"t", c.adam_t}};
  }
  return j;
}

inline Checkpoint checkpoint_from_json(const Json& j) {
  check_schema(j, "checkpoint");
  if (j.at("packing_order").get<std::string>() != kPackingOrder) throw FormatError("unknown packing order");
  Checkpoint c;
  ContractionProblem& p = c.problem;
  p.system = benchmark_system(j.at("system").get<std::string>());
  const auto& h = j.at("hyperparameters");
  p.a = h.at("a").get<double>();
  p.b = h.at("b").get<double>();
  p.c = h.at("c").get<double>();
  const auto& pol = j.at("policy");
  p.policy.gain = decode_matrix(pol.at("gain"));
  p.policy.x_eq = decode_matrix(pol.at("x_eq")).col(0);
  p.policy.u_eq = decode_matrix(pol.at("u_eq")).col(0);
  p.policy.residual = decode_mlp(pol.at("residual"));
  const auto& met = j.at("metric");
  p.metric.warm_start = decode_matrix(met.at("warm_start"));
  p.metric.projection = decode_matrix(met.at("projection"));
  p.metric.residual = decode_mlp(met.at("residual"));
  p.validate();
  c.region = decode_region(j.at("region"));
  c.stage = j.value("stage", 0);
  c.step = j.value("step", std::int64_t{0});
  c.seed = j.value("seed", std::uint64_t{0});
  c.rng_state = j.value("rng_state", "");
  c.config_text = j.value("config", "");
  if (j.contains("optimizer")) {
    c.adam_m = decode_matrix(j["optimizer"].at("m")).col(0);
    c.adam_v = decode_matrix(j["optimizer"].at("v")).col(0);
    c.adam_t = j["optimizer"].at("t").get<std::int64_t>();
  }
  if (j.contains("problem_hash") && j["problem_hash"].get<std::string>() != problem_hash(p)) {
    throw FormatError("checkpoint: problem hash does not match its parameters");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Certificates

inline Json certificate_to_json(const Certificate& c, const std::string& checkpoint_ref) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["kind"] = "certificate";
  j["checkpoint"] = checkpoint_ref;
  j["problem_hash"] = c.problem_hash;
  j["region"] = encode_region(c.region);
  j["propagator"] = c.propagator;
  j["hyperparameters"] = {{"a", c.a}, {"b", c.b}, {"c", c.c}};
  j["cell_lambda"] = c.cell_lambda;
  j["max_lambda"] = c.max_lambda;
  j["a_hat"] = c.a_hat;
  j["b_hat"] = c.b_hat;
  j["verdict"] = c.certified ? "certified" : "failed";
  j["cause"] = c.cause;
  j["timestamp"] = c.timestamp;
  j["seed"] = c.seed;
  return j;
}

inline Certificate certificate_from_json(const Json& j) {
  check_schema(j, "certificate");
  Certificate c;
  c.problem_hash = j.at("problem_hash").get<std::string>();
  c.region = decode_region(j.at("region"));
  c.propagator = j.at("propagator").get<std::string>();
  const auto& h = j.at("hyperparameters");
  c.a = h.at("a").get<double>();
  c.b = h.at("b").get<double>();
  c.c = h.at("c").get<double>();
  c.cell_lambda = j.at("cell_lambda").get<std::vector<double>>();
  c.max_lambda = j.at("max_lambda").get<double>();
  c.a_hat = j.at("a_hat").get<double>();
  c.b_hat = j.at("b_hat").get<double>();
  const auto verdict = j.at("verdict").get<std::string>();
  if (verdict != "certified" && verdict != "failed") throw FormatError("certificate: unknown verdict '" + verdict + "'");
  c.certified = verdict == "certified";
  c.cause = j.value("cause", "");
  c.timestamp = j.value("timestamp", "");
  c.seed = j.value("seed", std::uint64_t{0});
  return c;
}

// ---------------------------------------------------------------------------
// Files

inline Json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

inline void write_json(const std::string& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

/// Shortest round-trip representation.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline const char* kTrainLogHeader = "step,stage,loss,max_lambda,a_hat,b_hat,wall_time_s";

inline std::string format_log_row(const LogRow& r, bool zero_wall_time) {
  std::ostringstream os;
  os << r.step << ',' << r.stage << ',' << format_double(r.loss) << ',' << format_double(r.max_lambda) << ','
     << format_double(r.a_hat) << ',' << format_double(r.b_hat) << ','
     << format_double(zero_wall_time ? 0.0 : r.wall_time);
  return os.str();
}

}  // namespace ncc
