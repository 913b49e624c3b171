#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dtsp/error.hpp"
#include "dtsp/io.hpp"
#include "dtsp/model.hpp"

namespace dtsp {

// Binary layout, all integers little-endian u32:
//   "DTSPCKPT" | version | header length | header JSON
//   | tensor count | { name length | name | rows | cols | rows*cols float32 LE }*
// The header holds {"model": ModelConfig, "loss": {c, alpha, bc_mode, include_final_action}}.

inline constexpr char kCheckpointMagic[8] = {'D', 'T', 'S', 'P', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig model;
  LossOptions loss;
  ModelParams<float> params;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class ByteCursor {
 public:
  explicit ByteCursor(const std::string& data) : data_(data) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += 4;
    return v;
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool at_end() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) fail(ErrorCode::ParseError, "checkpoint truncated at byte " + std::to_string(pos_));
  }

  const std::string& data_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json header;
  header["model"] = ck.model;
  header["loss"] = {{"c", ck.loss.c},
                    {"alpha", ck.loss.alpha},
                    {"bc_mode", ck.loss.bc_mode},
                    {"include_final_action", ck.loss.include_final_action}};
  const std::string header_text = header.dump();
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(header_text.size()));
  out += header_text;
  const auto tensors = ck.params.tensors();
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(m->rows()));
    detail::put_u32(out, static_cast<std::uint32_t>(m->cols()));
    for (Eigen::Index i = 0; i < m->size(); ++i) detail::put_f32(out, m->data()[i]);
  }
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& data) {
  detail::ByteCursor cur(data);
  if (cur.bytes(sizeof kCheckpointMagic) != std::string(kCheckpointMagic, sizeof kCheckpointMagic)) {
    fail(ErrorCode::ParseError, "not a checkpoint file (bad magic)");
  }
  const std::uint32_t version = cur.u32();
  if (version != kCheckpointVersion) fail(ErrorCode::ParseError, "unsupported checkpoint version " + std::to_string(version));
  const std::string header_text = cur.bytes(cur.u32());
  Checkpoint ck;
  try {
    const auto header = nlohmann::json::parse(header_text);
    ck.model = ModelConfig{};
    from_json(header.at("model"), ck.model);
    const auto& loss = header.at("loss");
    ck.loss.c = loss.at("c").get<double>();
    ck.loss.alpha = loss.at("alpha").get<double>();
    ck.loss.bc_mode = loss.at("bc_mode").get<bool>();
    ck.loss.include_final_action = loss.at("include_final_action").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseError, std::string("checkpoint header: ") + e.what());
  }
  ck.model.validate();
  ck.params = ModelParams<float>::zeros(ck.model);
  auto tensors = ck.params.tensors();
  const std::uint32_t count = cur.u32();
  if (count != tensors.size()) fail(ErrorCode::ShapeError, "checkpoint tensor count does not match its config");
  for (auto& [name, m] : tensors) {
    const std::string stored = cur.bytes(cur.u32());
    const std::uint32_t rows = cur.u32();
    const std::uint32_t cols = cur.u32();
    if (stored != name || rows != m->rows() || cols != m->cols()) fail(ErrorCode::ShapeError, "checkpoint tensor '" + stored + "' does not match '" + name + "'");
    for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] = cur.f32();
  }
  if (!cur.at_end()) fail(ErrorCode::ParseError, "trailing bytes after checkpoint tensors");
  if (!ck.params.all_finite()) fail(ErrorCode::InvariantViolation, "checkpoint holds non-finite parameters");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  io::write_file_atomic(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoError, "cannot open checkpoint " + path.string());
  const std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_checkpoint(data);
}

}  // namespace dtsp
