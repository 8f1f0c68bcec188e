#include "fpn/param.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace fpn {

template <typename Dtype>
Tensor<Dtype>& ParameterMap<Dtype>::add(const std::string& name,
                                        Tensor<Dtype> value) {
  FPN_CHECK(!index_.count(name), "duplicate parameter name ", name);
  index_[name] = items_.size();
  items_.push_back({name, std::move(value)});
  return items_.back().value;
}

template <typename Dtype>
Tensor<Dtype>& ParameterMap<Dtype>::at(const std::string& name) {
  auto it = index_.find(name);
  FPN_CHECK(it != index_.end(), "unknown parameter ", name);
  return items_[it->second].value;
}

template <typename Dtype>
const Tensor<Dtype>& ParameterMap<Dtype>::at(const std::string& name) const {
  auto it = index_.find(name);
  FPN_CHECK(it != index_.end(), "unknown parameter ", name);
  return items_[it->second].value;
}

template <typename Dtype>
std::vector<std::string> ParameterMap<Dtype>::names() const {
  std::vector<std::string> out;
  for (const auto& p : items_) out.push_back(p.name);
  return out;
}

template <typename Dtype>
void ParameterMap<Dtype>::adopt(const std::string& prefix, ParameterMap& other) {
  for (auto& p : other.items_) add(prefix + "." + p.name, p.value);
}

template <typename Dtype>
Tensor<Dtype> gaussian_init(Shape shape, int fan_in, std::mt19937_64& rng) {
  FPN_CHECK(fan_in > 0, "fan_in must be positive");
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  auto t = Tensor<Dtype>::zeros(std::move(shape), true);
  for (auto& v : t.data()) v = static_cast<Dtype>(dist(rng));
  return t;
}

template <typename Dtype>
void SgdOptimizer<Dtype>::step(ParameterMap<Dtype>& params) {
  for (auto& p : params.items()) {
    FPN_CHECK(p.value.has_grad(), "missing gradient for parameter ", p.name);
    auto& v = velocity_[p.name];
    if (v.empty()) v.assign(p.value.numel(), Dtype(0));
    auto data = p.value.data();
    auto grad = p.value.grad();
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      v[i] = momentum_ * v[i] + grad[i] + weight_decay_ * data[i];
      data[i] -= lr_ * v[i];
    }
    p.value.zero_grad();
  }
}

template <typename Dtype>
Dtype clip_gradient_norm(ParameterMap<Dtype>& params, Dtype max_norm) {
  double sq = 0;
  for (auto& p : params.items()) {
    if (!p.value.has_grad()) continue;
    for (Dtype g : p.value.grad()) sq += static_cast<double>(g) * g;
  }
  Dtype norm = static_cast<Dtype>(std::sqrt(sq));
  if (norm > max_norm && norm > 0) {
    Dtype scale = max_norm / norm;
    for (auto& p : params.items()) {
      if (!p.value.has_grad()) continue;
      for (auto& g : p.value.grad()) g *= scale;
    }
  }
  return norm;
}

namespace {

constexpr char kMagic[4] = {'F', 'P', 'N', 'W'};
constexpr uint32_t kVersion = 1;

void write_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v),
                        static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t read_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
         (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
}

void write_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  write_u32(os, bits);
}

float read_f32(std::istream& is) {
  uint32_t bits = read_u32(is);
  float v;
  std::memcpy(&v, &bits, 4);
  return v;
}

}  // namespace

template <typename Dtype>
void save_checkpoint(const std::string& path, const ParameterMap<Dtype>& params) {
  std::ofstream os(path, std::ios::binary);
  FPN_CHECK(os.good(), "cannot open ", path, " for writing");
  os.write(kMagic, 4);
  write_u32(os, kVersion);
  write_u32(os, static_cast<uint32_t>(params.items().size()));
  for (const auto& p : params.items()) {
    write_u32(os, static_cast<uint32_t>(p.name.size()));
    os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    write_u32(os, static_cast<uint32_t>(p.value.shape().size()));
    for (int e : p.value.shape()) write_u32(os, static_cast<uint32_t>(e));
    for (Dtype v : p.value.data()) write_f32(os, static_cast<float>(v));
  }
  FPN_CHECK(os.good(), "write failure on ", path);
}

template <typename Dtype>
void load_checkpoint(const std::string& path, ParameterMap<Dtype>& params,
                     bool create_missing) {
  std::ifstream is(path, std::ios::binary);
  FPN_CHECK(is.good(), "cannot open checkpoint ", path);
  char magic[4];
  is.read(magic, 4);
  FPN_CHECK(std::memcmp(magic, kMagic, 4) == 0, path, " is not a checkpoint");
  uint32_t version = read_u32(is);
  FPN_CHECK(version == kVersion, "unsupported checkpoint version ", version);
  uint32_t count = read_u32(is);
  for (uint32_t r = 0; r < count; ++r) {
    uint32_t name_len = read_u32(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    uint32_t rank = read_u32(is);
    Shape shape(rank);
    for (uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(read_u32(is));
    if (!params.contains(name)) {
      FPN_CHECK(create_missing, "checkpoint tensor ", name,
                " has no matching parameter");
      // Registries being filled from scratch (e.g. optimizer state) get
      // the record's shape.
      params.add(name, Tensor<Dtype>::zeros(shape));
    }
    auto& t = params.at(name);
    FPN_CHECK(t.shape() == shape, "shape mismatch for ", name, ": model ",
              shape_str(t.shape()), " vs checkpoint ", shape_str(shape));
    for (auto& v : t.data()) v = static_cast<Dtype>(read_f32(is));
    FPN_CHECK(is.good(), "truncated checkpoint ", path);
  }
}

template <typename Dtype>
ParameterMap<Dtype> SgdOptimizer<Dtype>::state() const {
  // Sorted by name so the serialized form is deterministic.
  std::vector<std::pair<std::string, const std::vector<Dtype>*>> entries;
  for (const auto& [name, v] : velocity_) entries.emplace_back(name, &v);
  std::sort(entries.begin(), entries.end());
  ParameterMap<Dtype> out;
  for (auto& [name, v] : entries)
    out.add(name, Tensor<Dtype>::from_data({static_cast<int64_t>(v->size())}, *v));
  return out;
}

template <typename Dtype>
void SgdOptimizer<Dtype>::load_state(const ParameterMap<Dtype>& state) {
  velocity_.clear();
  for (const auto& p : state.items())
    velocity_[p.name].assign(p.value.data().begin(), p.value.data().end());
}

template class ParameterMap<float>;
template class ParameterMap<double>;
template class SgdOptimizer<float>;
template class SgdOptimizer<double>;
template Tensor<float> gaussian_init<float>(Shape, int, std::mt19937_64&);
template Tensor<double> gaussian_init<double>(Shape, int, std::mt19937_64&);
template float clip_gradient_norm<float>(ParameterMap<float>&, float);
template double clip_gradient_norm<double>(ParameterMap<double>&, double);
template void save_checkpoint<float>(const std::string&, const ParameterMap<float>&);
template void save_checkpoint<double>(const std::string&, const ParameterMap<double>&);
template void load_checkpoint<float>(const std::string&, ParameterMap<float>&, bool);
template void load_checkpoint<double>(const std::string&, ParameterMap<double>&, bool);

}  // namespace fpn
