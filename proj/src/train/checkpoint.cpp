#include "sda/train/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sda/errors.hpp"

namespace sda::train {

namespace {

constexpr char kMagic[4] = {'S', 'D', 'C', 'K'};
const std::string kMomentumPrefix = "optim.momentum.";

template <typename U>
void put(std::string& out, U v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char buf[sizeof(U)];
  std::memcpy(buf, &v, sizeof(U));
  out.append(buf, sizeof(U));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, s_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  bool done() const { return pos_ == s_.size(); }

 private:
  void need(std::size_t n) const {
    if (s_.size() - pos_ < n) throw IoError("checkpoint: truncated archive");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

const AnyTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out(kMagic, 4);
  put<std::uint8_t>(out, kCheckpointVersion);
  const std::string meta = ck.meta.dump();
  put<std::uint64_t>(out, meta.size());
  out += meta;
  put<std::uint64_t>(out, ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    put<std::uint32_t>(out, std::uint32_t(name.size()));
    out += name;
    const std::string blob = std::visit([](const auto& x) { return encode_sdat(x); }, t);
    put<std::uint64_t>(out, blob.size());
    out += blob;
  }
  return out;
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  Reader r(bytes);
  if (r.bytes(4) != std::string(kMagic, 4)) throw IoError("checkpoint: bad magic");
  const auto version = r.get<std::uint8_t>();
  if (version != kCheckpointVersion) throw IoError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ck;
  const auto meta_len = r.get<std::uint64_t>();
  try {
    ck.meta = nlohmann::json::parse(r.bytes(meta_len));
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed metadata: ") + e.what());
  }
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    std::string blob = r.bytes(r.get<std::uint64_t>());
    try {
      ck.tensors.emplace_back(name, decode_sdat(blob));
    } catch (const std::exception& e) {
      throw IoError("checkpoint: tensor \"" + name + "\": " + e.what());
    }
  }
  if (!r.done()) throw IoError("checkpoint: trailing bytes");
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    const std::string bytes = encode_checkpoint(ck);
    os.write(bytes.data(), std::streamsize(bytes.size()));
    if (!os) throw IoError("cannot write " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into " + path.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot read checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  try {
    return decode_checkpoint(ss.str());
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

Checkpoint make_checkpoint(detector::Detector<float>& model, const TrainConfig& cfg, std::size_t epoch,
                           const Sgd<float>* opt, const std::string& rng_state) {
  Checkpoint ck;
  model.visit_params([&](const std::string& name, Parameter<float>& p) { ck.tensors.emplace_back(name, p.value); });
  if (opt) {
    for (std::size_t i = 0; i < opt->names().size(); ++i) {
      ck.tensors.emplace_back(kMomentumPrefix + opt->names()[i], opt->buffers()[i]);
    }
  }
  ck.meta = {{"config", cfg}, {"epoch", epoch}, {"rng_state", rng_state}};
  return ck;
}

void load_parameters(detector::Detector<float>& model, const Checkpoint& ck) {
  model.visit_params([&](const std::string& name, Parameter<float>& p) {
    const AnyTensor* t = ck.find(name);
    if (!t) throw ConfigError("checkpoint: missing parameter \"" + name + "\"");
    Tensor<float> v = tensor_as<float>(*t);
    if (v.shape() != p.value.shape()) {
      throw ConfigError("checkpoint: parameter \"" + name + "\" has shape " + shape_str(v.shape()) + ", model expects " +
                        shape_str(p.value.shape()));
    }
    p.value = std::move(v);
    p.zero_grad();
  });
}

TrainConfig checkpoint_config(const Checkpoint& ck) {
  if (!ck.meta.contains("config")) throw ConfigError("checkpoint: no config snapshot");
  try {
    return ck.meta.at("config").get<TrainConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("checkpoint: bad config snapshot: ") + e.what());
  }
}

detector::Detector<float> restore_detector(const Checkpoint& ck) {
  const TrainConfig cfg = checkpoint_config(ck);
  auto model = detector::Detector<float>::init(cfg.detector_config(), cfg.seed);
  load_parameters(model, ck);
  return model;
}

void restore_optimizer(Sgd<float>& opt, detector::Detector<float>& model, const Checkpoint& ck) {
  std::vector<std::string> names;
  std::vector<Tensor<float>> bufs;
  model.visit_params([&](const std::string& name, Parameter<float>& p) {
    const AnyTensor* t = ck.find(kMomentumPrefix + name);
    if (!t) throw ConfigError("checkpoint: missing momentum for \"" + name + "\"");
    Tensor<float> v = tensor_as<float>(*t);
    if (v.shape() != p.value.shape()) throw ConfigError("checkpoint: momentum shape mismatch for \"" + name + "\"");
    names.push_back(name);
    bufs.push_back(std::move(v));
  });
  opt.set_state(std::move(names), std::move(bufs));
}

}  // namespace sda::train
