#include "mdcl/networks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "mdcl/rng.hpp"

namespace mdcl {

void NetworkConfig::validate() const {
  if (height <= 0 || width <= 0)
    throw std::invalid_argument("NetworkConfig: height and width must be positive");
  if (height % 8 != 0 || width % 8 != 0)
    throw std::invalid_argument("NetworkConfig: height and width must be divisible by 8, got " +
                                std::to_string(height) + "x" + std::to_string(width));
  if (base_channels < 4 || base_channels % 2 != 0)
    throw std::invalid_argument("NetworkConfig: base_channels must be an even number >= 4, got " +
                                std::to_string(base_channels));
}

namespace {

struct ConvSpec {
  std::string name;
  int out_c, in_c, k, stride, pad;
};

// Full topology of one model: depth U-net (three stride-2 encoder stages,
// skip-connected decoder with a sigmoid head per scale) plus the ego-motion
// encoder with pose and optional intrinsics heads.
std::vector<ConvSpec> layer_table(const NetworkConfig& cfg) {
  const int c = cfg.base_channels;
  std::vector<ConvSpec> t = {
      {"depth.enc1", c, 3, 3, 2, 1},
      {"depth.enc2", 2 * c, c, 3, 2, 1},
      {"depth.enc3", 4 * c, 2 * c, 3, 2, 1},
      {"depth.dec3", 2 * c, 4 * c, 3, 1, 1},
      {"depth.head3", 1, 2 * c, 3, 1, 1},
      {"depth.dec2", c, 4 * c, 3, 1, 1},
      {"depth.head2", 1, c, 3, 1, 1},
      {"depth.dec1", c / 2, 2 * c, 3, 1, 1},
      {"depth.head1", 1, c / 2, 3, 1, 1},
      {"depth.dec0", c / 2, c / 2, 3, 1, 1},
      {"depth.head0", 1, c / 2, 3, 1, 1},
      {"pose.enc1", c, 6, 3, 2, 1},
      {"pose.enc2", 2 * c, c, 3, 2, 1},
      {"pose.enc3", 4 * c, 2 * c, 3, 2, 1},
      {"pose.head", 6, 4 * c, 1, 1, 0},
  };
  if (cfg.learn_intrinsics) t.push_back({"pose.intr", 4, 4 * c, 1, 1, 0});
  return t;
}

}  // namespace

template <typename T>
ModelParams<T>::ModelParams(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  for (const ConvSpec& s : layer_table(cfg_)) {
    const double std_dev = std::sqrt(2.0 / (s.in_c * s.k * s.k));
    Rng rng = Rng::stream(seed, "init." + s.name);
    std::vector<T> w(static_cast<std::size_t>(s.out_c) * s.in_c * s.k * s.k);
    for (T& v : w) v = static_cast<T>(rng.normal() * std_dev);
    params_.push_back({s.name + ".w", Tensor<T>::param({s.out_c, s.in_c, s.k, s.k}, std::move(w))});
    params_.push_back({s.name + ".b", Tensor<T>::param({s.out_c}, std::vector<T>(s.out_c, T(0)))});
  }
}

template <typename T>
const Tensor<T>& ModelParams<T>::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.tensor;
  throw std::invalid_argument("ModelParams: no parameter named " + name);
}

template <typename T>
ModelParams<T> ModelParams<T>::clone() const {
  ModelParams out;
  out.cfg_ = cfg_;
  out.params_.reserve(params_.size());
  for (const auto& p : params_) {
    std::vector<T> data(p.tensor.values().begin(), p.tensor.values().end());
    out.params_.push_back({p.name, Tensor<T>::param(p.tensor.shape(), std::move(data))});
  }
  return out;
}

template <typename T>
void ModelParams<T>::copy_values_from(const ModelParams& other) {
  check(params_.size() == other.params_.size(), "copy_values_from: parameter count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& dst = params_[i];
    const auto& src = other.params_[i];
    check(dst.name == src.name && dst.tensor.shape() == src.tensor.shape(),
          "copy_values_from: mismatch at " + dst.name);
    auto out = dst.tensor.values_mut();
    auto in = src.tensor.values();
    std::copy(in.begin(), in.end(), out.begin());
  }
}

template <typename T>
std::vector<Tensor<T>> depth_forward(const Tensor<T>& image, const ModelParams<T>& m) {
  const NetworkConfig& cfg = m.config();
  const int h = cfg.height, w = cfg.width;
  check(image.shape() == Shape({3, h, w}), "depth_forward: image must be {3," +
                                               std::to_string(h) + "," + std::to_string(w) + "}");
  auto cv = [&](const Tensor<T>& in, const std::string& name, int stride, int pad) {
    return conv2d(in, m.get(name + ".w"), m.get(name + ".b"), stride, pad);
  };
  Tensor<T> x = reshape(image, {1, 3, h, w});
  Tensor<T> e1 = elu(cv(x, "depth.enc1", 2, 1));   // {1, C, H/2, W/2}
  Tensor<T> e2 = elu(cv(e1, "depth.enc2", 2, 1));  // {1,2C, H/4, W/4}
  Tensor<T> e3 = elu(cv(e2, "depth.enc3", 2, 1));  // {1,4C, H/8, W/8}

  Tensor<T> d3 = elu(cv(e3, "depth.dec3", 1, 1));
  Tensor<T> s3 = sigmoid(cv(d3, "depth.head3", 1, 1));

  Tensor<T> u2 = bilinear_resize(d3, h / 4, w / 4);
  Tensor<T> d2 = elu(cv(concat<T>({u2, e2}, 1), "depth.dec2", 1, 1));
  Tensor<T> s2 = sigmoid(cv(d2, "depth.head2", 1, 1));

  Tensor<T> u1 = bilinear_resize(d2, h / 2, w / 2);
  Tensor<T> d1 = elu(cv(concat<T>({u1, e1}, 1), "depth.dec1", 1, 1));
  Tensor<T> s1 = sigmoid(cv(d1, "depth.head1", 1, 1));

  Tensor<T> u0 = bilinear_resize(d1, h, w);
  Tensor<T> d0 = elu(cv(u0, "depth.dec0", 1, 1));
  Tensor<T> s0 = sigmoid(cv(d0, "depth.head0", 1, 1));

  auto to_hw = [&](const Tensor<T>& s) {
    Tensor<T> up = (s.shape()[2] == h && s.shape()[3] == w) ? s : bilinear_resize(s, h, w);
    return reshape(up, {h, w});
  };
  return {to_hw(s3), to_hw(s2), to_hw(s1), to_hw(s0)};  // coarsest first
}

template <typename T>
PosePrediction<T> pose_forward(const Tensor<T>& source, const Tensor<T>& target,
                               const ModelParams<T>& m) {
  const NetworkConfig& cfg = m.config();
  const int h = cfg.height, w = cfg.width;
  check(source.shape() == Shape({3, h, w}) && target.shape() == Shape({3, h, w}),
        "pose_forward: images must be {3," + std::to_string(h) + "," + std::to_string(w) + "}");
  auto cv = [&](const Tensor<T>& in, const std::string& name, int stride, int pad) {
    return conv2d(in, m.get(name + ".w"), m.get(name + ".b"), stride, pad);
  };
  Tensor<T> pair = reshape(concat<T>({source, target}, 0), {1, 6, h, w});
  Tensor<T> p1 = elu(cv(pair, "pose.enc1", 2, 1));
  Tensor<T> p2 = elu(cv(p1, "pose.enc2", 2, 1));
  Tensor<T> p3 = elu(cv(p2, "pose.enc3", 2, 1));  // {1,4C,H/8,W/8}

  const int c4 = 4 * cfg.base_channels;
  Tensor<T> flat = reshape(p3, {1, c4, (h / 8) * (w / 8)});
  Tensor<T> feat = reshape(reduce_mean_axis(flat, 2, false), {1, c4, 1, 1});

  Tensor<T> raw = mul_scalar(cv(feat, "pose.head", 1, 0), T(0.01));
  Tensor<T> v6 = reshape(raw, {6});
  PosePrediction<T> out;
  out.pose.axis_angle = narrow(v6, 0, 0, 3);
  out.pose.translation = narrow(v6, 0, 3, 3);
  if (cfg.learn_intrinsics) {
    Tensor<T> k4 = reshape(cv(feat, "pose.intr", 1, 0), {4});
    out.intrinsics.fx = mul_scalar(softplus(narrow(k4, 0, 0, 1)), static_cast<T>(w));
    out.intrinsics.fy = mul_scalar(softplus(narrow(k4, 0, 1, 1)), static_cast<T>(h));
    out.intrinsics.cx = mul_scalar(sigmoid(narrow(k4, 0, 2, 1)), static_cast<T>(w));
    out.intrinsics.cy = mul_scalar(sigmoid(narrow(k4, 0, 3, 1)), static_cast<T>(h));
    out.has_intrinsics = true;
  }
  return out;
}

namespace {

constexpr char kMagic[] = "MDCLCKPT1\n";
constexpr std::size_t kMagicLen = 10;

void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

std::uint64_t get_u64_le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

}  // namespace

void save_checkpoint(const std::string& path, const std::string& meta_json,
                     const std::vector<CheckpointTensor>& tensors) {
  nlohmann::json manifest;
  try {
    manifest["meta"] = nlohmann::json::parse(meta_json);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: meta is not valid JSON: " + std::string(e.what()));
  }
  manifest["tensors"] = nlohmann::json::array();
  for (const CheckpointTensor& t : tensors) {
    std::int64_t n = 1;
    for (auto d : t.shape) n *= d;
    if (n != static_cast<std::int64_t>(t.data.size()))
      throw std::runtime_error("checkpoint: shape/data mismatch for tensor " + t.name);
    manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
  }
  const std::string m = manifest.dump();

  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp + " for writing");
    os.write(kMagic, kMagicLen);
    put_u64_le(os, m.size());
    os.write(m.data(), static_cast<std::streamsize>(m.size()));
    for (const CheckpointTensor& t : tensors) {
      static_assert(sizeof(float) == 4);
      for (float v : t.data) {
        std::uint32_t u;
        std::memcpy(&u, &v, 4);
        unsigned char b[4] = {static_cast<unsigned char>(u & 0xff),
                              static_cast<unsigned char>((u >> 8) & 0xff),
                              static_cast<unsigned char>((u >> 16) & 0xff),
                              static_cast<unsigned char>((u >> 24) & 0xff)};
        os.write(reinterpret_cast<const char*>(b), 4);
      }
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("checkpoint: cannot rename " + tmp + " to " + path);
}

void load_checkpoint(const std::string& path, std::string& meta_json,
                     std::vector<CheckpointTensor>& tensors) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[kMagicLen];
  is.read(magic, kMagicLen);
  if (!is || std::memcmp(magic, kMagic, kMagicLen) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const std::uint64_t mlen = get_u64_le(is);
  if (!is || mlen > (1ull << 30))
    throw std::runtime_error("checkpoint: corrupt manifest length in " + path);
  std::string m(mlen, '\0');
  is.read(m.data(), static_cast<std::streamsize>(mlen));
  if (!is) throw std::runtime_error("checkpoint: truncated manifest in " + path);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(m);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("checkpoint: invalid manifest in " + path + ": " + e.what());
  }
  meta_json = manifest.at("meta").dump();
  tensors.clear();
  for (const auto& jt : manifest.at("tensors")) {
    CheckpointTensor t;
    t.name = jt.at("name").get<std::string>();
    t.shape = jt.at("shape").get<Shape>();
    std::int64_t n = 1;
    for (auto d : t.shape) n *= d;
    t.data.resize(static_cast<std::size_t>(n));
    for (float& v : t.data) {
      unsigned char b[4];
      is.read(reinterpret_cast<char*>(b), 4);
      if (!is)
        throw std::runtime_error("checkpoint: truncated payload in " + path + " at tensor " +
                                 t.name);
      std::uint32_t u = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                        (static_cast<std::uint32_t>(b[2]) << 16) |
                        (static_cast<std::uint32_t>(b[3]) << 24);
      std::memcpy(&v, &u, 4);
    }
    tensors.push_back(std::move(t));
  }
  if (is.get() != std::ifstream::traits_type::eof())
    throw std::runtime_error("checkpoint: trailing bytes in " + path);
}

template <typename T>
void append_model_tensors(const ModelParams<T>& m, const std::string& prefix,
                          std::vector<CheckpointTensor>& out) {
  for (const auto& p : m.params()) {
    CheckpointTensor t;
    t.name = prefix + p.name;
    t.shape = p.tensor.shape();
    t.data.reserve(static_cast<std::size_t>(p.tensor.size()));
    for (T v : p.tensor.values()) t.data.push_back(static_cast<float>(v));
    out.push_back(std::move(t));
  }
}

template <typename T>
void restore_model_tensors(ModelParams<T>& m, const std::string& prefix,
                           const std::vector<CheckpointTensor>& tensors) {
  for (auto& p : m.params()) {
    const std::string want = prefix + p.name;
    const CheckpointTensor* found = nullptr;
    for (const auto& t : tensors)
      if (t.name == want) {
        found = &t;
        break;
      }
    if (!found) throw std::runtime_error("checkpoint: missing tensor " + want);
    check(found->shape == p.tensor.shape(), "checkpoint: shape mismatch for " + want);
    auto dst = p.tensor.values_mut();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(found->data[i]);
  }
}

#define MDCL_NETWORKS_INSTANTIATE(T)                                                        \
  template class ModelParams<T>;                                                            \
  template std::vector<Tensor<T>> depth_forward<T>(const Tensor<T>&, const ModelParams<T>&); \
  template PosePrediction<T> pose_forward<T>(const Tensor<T>&, const Tensor<T>&,            \
                                             const ModelParams<T>&);                        \
  template void append_model_tensors<T>(const ModelParams<T>&, const std::string&,          \
                                        std::vector<CheckpointTensor>&);                    \
  template void restore_model_tensors<T>(ModelParams<T>&, const std::string&,               \
                                         const std::vector<CheckpointTensor>&);

MDCL_NETWORKS_INSTANTIATE(float)
MDCL_NETWORKS_INSTANTIATE(double)

}  // namespace mdcl
