#include "qfm/params.hpp"

#include <iomanip>
#include <sstream>

#include <openssl/evp.h>

#include "qfm/error.hpp"

namespace qfm {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (index_.count(name)) throw ConfigError("duplicate parameter name " + name);
  index_[name] = entries_.size();
  entries_.emplace_back(name, std::move(value));
  return entries_.back().second;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return entries_[it->second].second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter " + name);
  return entries_[it->second].second;
}

std::size_t ParamStore::total_elements() const {
  std::size_t n = 0;
  for (const auto& [_, t] : entries_) n += t.numel();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [_, t] : entries_) t.zero_grad();
}

void ParamStore::set_requires_grad(bool value) {
  for (auto& [_, t] : entries_) t.set_requires_grad(value);
}

ParamStore ParamStore::clone() const {
  ParamStore out;
  for (const auto& [name, t] : entries_) {
    Tensor copy = t.detach();
    copy.set_requires_grad(t.requires_grad());
    out.add(name, copy);
  }
  return out;
}

std::string ParamStore::digest() const {
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const auto& [name, t] : entries_) {
    EVP_DigestUpdate(ctx, name.data(), name.size() + 1);
    const std::string s = shape_str(t.shape());
    EVP_DigestUpdate(ctx, s.data(), s.size());
    EVP_DigestUpdate(ctx, t.data().data(), t.numel() * sizeof(float));
  }
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) {
    os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  }
  return os.str();
}

}  // namespace qfm
