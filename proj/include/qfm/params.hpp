#pragma once

#include <map>
#include <string>
#include <vector>

#include "qfm/tensor.hpp"

namespace qfm {

// Named trainable tensors in insertion order. Names are slash-delimited paths
// such as "encoder/block0/attn/wq".
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);

  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }

  std::size_t size() const { return entries_.size(); }
  std::size_t total_elements() const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::vector<std::pair<std::string, Tensor>>& entries() { return entries_; }

  void zero_grad();
  void set_requires_grad(bool value);

  // Deep copy: the result shares no storage with *this.
  ParamStore clone() const;

  // Hex SHA-256 over names, shapes and raw little-endian values.
  std::string digest() const;

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace qfm
