#include "d2cse/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace d2cse {
namespace {

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  void bytes(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  void raw(const char* p, std::size_t n) { buf_.append(p, n); }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    const std::uint64_t lo = u32();
    return lo | (static_cast<std::uint64_t>(u32()) << 32);
  }
  std::string bytes() {
    const auto n = u32();
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string raw(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw CheckpointError("checkpoint is truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

std::vector<NamedTensor> stored_tensors(const Model& model) {
  auto out = model.trainable();
  const auto& bn = model.heads.pooler.bn;
  out.emplace_back("pooler.bn.running_mean", Tensor({bn.running_mean.size()}, bn.running_mean));
  out.emplace_back("pooler.bn.running_var", Tensor({bn.running_var.size()}, bn.running_var));
  return out;
}

}  // namespace

Model build_model(const TrainConfig& config) {
  config.validate();
  if (config.encoder.vocab_size == 0) throw std::invalid_argument("encoder.vocab_size is unresolved");
  return Model::create(config.encoder, config.encoder_seed, config.effective_prompt_len(), config.cls_prompt,
                       config.variant(), config.seed);
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const Model& model,
                     std::uint64_t step) {
  Writer w;
  w.raw(kCheckpointMagic, 4);
  w.u32(kCheckpointVersion);
  w.u64(step);
  w.bytes(config.to_json());
  const auto tensors = stored_tensors(model);
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(t.shape().size()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.data()) w.u32(std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  w.bytes(checksum(model.encoder));

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp);
    out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());

  if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw CheckpointError(path.string() + ": not a checkpoint (bad magic)");
  const auto version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(path.string() + ": unsupported format version " + std::to_string(version));
  }
  Checkpoint ck;
  ck.step = r.u64();
  try {
    ck.config = TrainConfig::from_json(r.bytes());
    ck.model = build_model(ck.config);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(path.string() + ": bad config snapshot: " + e.what());
  }

  std::map<std::string, Tensor> targets;
  for (auto& [name, t] : ck.model.trainable()) targets.emplace(name, t);
  auto& bn = ck.model.heads.pooler.bn;
  std::vector<double> running_mean, running_var;

  const auto count = r.u32();
  std::size_t assigned = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = r.bytes();
    Shape shape(r.u32());
    for (auto& d : shape) d = r.u32();
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<double>(std::bit_cast<float>(r.u32()));
    if (name == "pooler.bn.running_mean" || name == "pooler.bn.running_var") {
      if (values.size() != bn.running_mean.size()) throw CheckpointError(path.string() + ": " + name + " has the wrong size");
      (name == "pooler.bn.running_mean" ? running_mean : running_var) = std::move(values);
      continue;
    }
    auto it = targets.find(name);
    if (it == targets.end()) throw CheckpointError(path.string() + ": unexpected tensor " + name);
    if (it->second.shape() != shape) {
      throw CheckpointError(path.string() + ": tensor " + name + " has shape " + shape_to_string(shape) +
                            ", model expects " + shape_to_string(it->second.shape()));
    }
    std::copy(values.begin(), values.end(), it->second.data().begin());
    ++assigned;
  }
  if (assigned != targets.size() || running_mean.empty() || running_var.empty()) {
    throw CheckpointError(path.string() + ": checkpoint is missing tensors");
  }
  bn.running_mean = std::move(running_mean);
  bn.running_var = std::move(running_var);

  const auto stored = r.bytes();
  if (!r.done()) throw CheckpointError(path.string() + ": trailing bytes after checksum");
  if (stored != checksum(ck.model.encoder)) {
    throw CheckpointError(path.string() + ": frozen encoder checksum mismatch; refusing to load");
  }
  return ck;
}

}  // namespace d2cse
