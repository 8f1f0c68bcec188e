#pragma once

#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "fpn/tensor.hpp"

namespace fpn {

template <typename Dtype>
struct Parameter {
  std::string name;  // unique path, e.g. "fpn.lateral.3.weight"
  Tensor<Dtype> value;
};

// Flat named-parameter registry. Names determine serialization slots and
// must be unique within a model.
template <typename Dtype>
class ParameterMap {
 public:
  Tensor<Dtype>& add(const std::string& name, Tensor<Dtype> value);
  Tensor<Dtype>& at(const std::string& name);
  const Tensor<Dtype>& at(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  std::vector<Parameter<Dtype>>& items() { return items_; }
  const std::vector<Parameter<Dtype>>& items() const { return items_; }
  std::vector<std::string> names() const;

  // Absorbs another map under a name prefix ("prefix." prepended).
  void adopt(const std::string& prefix, ParameterMap& other);

 private:
  std::vector<Parameter<Dtype>> items_;
  std::unordered_map<std::string, size_t> index_;
};

// Zero-mean Gaussian scaled by fan-in (std = sqrt(2 / fan_in)).
template <typename Dtype>
Tensor<Dtype> gaussian_init(Shape shape, int fan_in, std::mt19937_64& rng);

template <typename Dtype>
class SgdOptimizer {
 public:
  SgdOptimizer(Dtype lr, Dtype momentum, Dtype weight_decay)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {}

  void set_lr(Dtype lr) { lr_ = lr; }
  Dtype lr() const { return lr_; }

  // v <- momentum*v + grad + wd*param; param <- param - lr*v; grads zeroed.
  void step(ParameterMap<Dtype>& params);

  // Momentum buffers as a checkpointable registry (one tensor per
  // parameter already seen by step), and the inverse for resuming.
  ParameterMap<Dtype> state() const;
  void load_state(const ParameterMap<Dtype>& state);

 private:
  Dtype lr_, momentum_, weight_decay_;
  std::unordered_map<std::string, std::vector<Dtype>> velocity_;
};

// Rescales all gradients in the map so their joint Euclidean norm is at
// most max_norm. Returns the norm before clipping.
template <typename Dtype>
Dtype clip_gradient_norm(ParameterMap<Dtype>& params, Dtype max_norm);

// Flat binary checkpoint: magic "FPNW", u32 version, u32 record count,
// then per record u32 name length, name bytes, u32 rank, u32 extents,
// little-endian f32 payload. See docs/formats.md.
template <typename Dtype>
void save_checkpoint(const std::string& path, const ParameterMap<Dtype>& params);
template <typename Dtype>
// When create_missing is true, tensors in the file without a matching entry
// are added to the map (used to fill empty registries such as optimizer
// state); otherwise an unknown tensor is an error.
void load_checkpoint(const std::string& path, ParameterMap<Dtype>& params,
                     bool create_missing = false);

}  // namespace fpn
