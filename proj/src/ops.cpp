#include "qfm/ops.hpp"

#include <cmath>
#include <string>

#include "qfm/error.hpp"

namespace qfm::ops {

namespace {

bool recording(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// Finishes an op: finite check, then records the backward rule if needed.
template <typename Backward>
Tensor finish(std::string_view op, Tensor out, bool record, Backward&& backward) {
  check_finite(out, op);
  if (record) {
    out.set_requires_grad(true);
    Tape::active()->record(op, out, std::forward<Backward>(backward));
  }
  return out;
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor");
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

enum class Broadcast { kSame, kLeftScalar, kRightScalar };

Broadcast broadcast_kind(const Tensor& a, const Tensor& b, std::string_view op) {
  if (a.shape() == b.shape()) return Broadcast::kSame;
  if (a.numel() == 1) return Broadcast::kLeftScalar;
  if (b.numel() == 1) return Broadcast::kRightScalar;
  throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                   shape_str(b.shape()) + " are not identical and neither is a scalar");
}

// Generic elementwise binary op with scalar broadcasting. fwd(x, y) gives the
// value; dfa/dfb give partial derivatives at (x, y).
template <typename F, typename DA, typename DB>
Tensor binary(std::string_view op, const Tensor& a, const Tensor& b, F fwd, DA dfa, DB dfb) {
  const Broadcast kind = broadcast_kind(a, b, op);
  const Shape& out_shape = kind == Broadcast::kLeftScalar ? b.shape() : a.shape();
  const std::size_t n = shape_numel(out_shape);
  auto ad = a.data();
  auto bd = b.data();
  const std::size_t sa = kind == Broadcast::kLeftScalar ? 0 : 1;
  const std::size_t sb = kind == Broadcast::kRightScalar ? 0 : 1;
  std::vector<float> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = fwd(ad[i * sa], bd[i * sb]);
  const bool rec = recording({&a, &b});
  Tensor result(out_shape, std::move(out));
  return finish(op, result, rec, [a, b, result, n, sa, sb, dfa, dfb]() mutable {
    auto g = result.grad();
    auto ad = a.data();
    auto bd = b.data();
    if (a.requires_grad()) {
      auto ga = a.mutable_grad();
      for (std::size_t i = 0; i < n; ++i) ga[i * sa] += g[i] * dfa(ad[i * sa], bd[i * sb]);
    }
    if (b.requires_grad()) {
      auto gb = b.mutable_grad();
      for (std::size_t i = 0; i < n; ++i) gb[i * sb] += g[i] * dfb(ad[i * sa], bd[i * sb]);
    }
  });
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: inner dimensions disagree for " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<float> out(m * n, 0.0f);
  const float* A = a.data().data();
  const float* B = b.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    float* c = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float av = A[i * k + p];
      const float* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * brow[j];
    }
  }
  const bool rec = recording({&a, &b});
  Tensor result({m, n}, std::move(out));
  return finish("matmul", result, rec, [a, b, result, m, k, n]() mutable {
    const float* G = result.grad().data();
    const float* A = a.data().data();
    const float* B = b.data().data();
    if (a.requires_grad()) {
      // dA = dC * B^T
      // Row updates over a transposed copy of B vectorize; a dot-product
      // reduction does not without reassociation.
      std::vector<float> bt(n * k);
      for (std::size_t p = 0; p < k; ++p)
        for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
      float* GA = a.mutable_grad().data();
      for (std::size_t i = 0; i < m; ++i) {
        const float* grow = G + i * n;
        float* garow = GA + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          const float g = grow[j];
          const float* btrow = bt.data() + j * k;
          for (std::size_t p = 0; p < k; ++p) garow[p] += g * btrow[p];
        }
      }
    }
    if (b.requires_grad()) {
      // dB = A^T * dC
      float* GB = b.mutable_grad().data();
      for (std::size_t i = 0; i < m; ++i) {
        const float* grow = G + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const float av = A[i * k + p];
          float* gbrow = GB + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += av * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<float> out(r * c);
  auto ad = a.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = ad[i * c + j];
  const bool rec = recording({&a});
  Tensor result({c, r}, std::move(out));
  return finish("transpose", result, rec, [a, result, r, c]() mutable {
    auto g = result.grad();
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary(
      "add", a, b, [](float x, float y) { return x + y; }, [](float, float) { return 1.0f; },
      [](float, float) { return 1.0f; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary(
      "sub", a, b, [](float x, float y) { return x - y; }, [](float, float) { return 1.0f; },
      [](float, float) { return -1.0f; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary(
      "mul", a, b, [](float x, float y) { return x * y; }, [](float, float y) { return y; },
      [](float x, float) { return x; });
}

Tensor scale(const Tensor& a, float s) {
  std::vector<float> out(a.data().begin(), a.data().end());
  for (float& v : out) v *= s;
  const bool rec = recording({&a});
  Tensor result(a.shape(), std::move(out));
  return finish("scale", result, rec, [a, result, s]() mutable {
    auto g = result.grad();
    auto ga = a.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

Tensor add_rowwise(const Tensor& x, const Tensor& row) {
  require_rank(x, 2, "add_rowwise");
  const std::size_t n = x.dim(0), d = x.dim(1);
  if (row.numel() != d) {
    throw ShapeError("add_rowwise: row " + shape_str(row.shape()) + " does not fit " +
                     shape_str(x.shape()));
  }
  std::vector<float> out(x.data().begin(), x.data().end());
  auto rd = row.data();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += rd[j];
  const bool rec = recording({&x, &row});
  Tensor result(x.shape(), std::move(out));
  return finish("add_rowwise", result, rec, [x, row, result, n, d]() mutable {
    auto g = result.grad();
    if (x.requires_grad()) {
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (row.requires_grad()) {
      auto gr = row.mutable_grad();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gr[j] += g[i * d + j];
    }
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add_rowwise(matmul(x, w), b);
}

Tensor gelu(const Tensor& x) {
  constexpr float kInvSqrt2 = 0.70710678118654752f;
  constexpr float kInvSqrt2Pi = 0.39894228040143268f;
  std::vector<float> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = 0.5f * xd[i] * (1.0f + std::erf(xd[i] * kInvSqrt2));
  }
  const bool rec = recording({&x});
  Tensor result(x.shape(), std::move(out));
  return finish("gelu", result, rec, [x, result]() mutable {
    auto g = result.grad();
    auto xd = x.data();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const float v = xd[i];
      const float cdf = 0.5f * (1.0f + std::erf(v * kInvSqrt2));
      const float pdf = kInvSqrt2Pi * std::exp(-0.5f * v * v);
      gx[i] += g[i] * (cdf + v * pdf);
    }
  });
}

Tensor relu(const Tensor& x) {
  std::vector<float> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > 0.0f ? xd[i] : 0.0f;
  const bool rec = recording({&x});
  Tensor result(x.shape(), std::move(out));
  return finish("relu", result, rec, [x, result]() mutable {
    auto g = result.grad();
    auto xd = x.data();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xd[i] > 0.0f) gx[i] += g[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const bool rec = recording({&x});
  Tensor result = Tensor::scalar(static_cast<float>(acc));
  return finish("sum", result, rec, [x, result]() mutable {
    const float g = result.grad()[0];
    for (float& v : x.mutable_grad()) v += g;
  });
}

Tensor mean(const Tensor& x) {
  double acc = 0.0;
  for (float v : x.data()) acc += v;
  const float inv = 1.0f / static_cast<float>(x.numel());
  const bool rec = recording({&x});
  Tensor result = Tensor::scalar(static_cast<float>(acc / static_cast<double>(x.numel())));
  return finish("mean", result, rec, [x, result, inv]() mutable {
    const float g = result.grad()[0] * inv;
    for (float& v : x.mutable_grad()) v += g;
  });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw ShapeError("softmax: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t n = x.dim(axis);
  auto xd = x.data();
  std::vector<float> out(x.numel());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * n * inner + in;
      float mx = xd[base];
      for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xd[base + j * inner]);
      float total = 0.0f;
      for (std::size_t j = 0; j < n; ++j) {
        const float e = std::exp(xd[base + j * inner] - mx);
        out[base + j * inner] = e;
        total += e;
      }
      const float inv = 1.0f / total;
      for (std::size_t j = 0; j < n; ++j) out[base + j * inner] *= inv;
    }
  }
  const bool rec = recording({&x});
  Tensor result(x.shape(), std::move(out));
  return finish("softmax", result, rec, [x, result, outer, inner, n]() mutable {
    auto g = result.grad();
    auto y = result.data();
    auto gx = x.mutable_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t in = 0; in < inner; ++in) {
        const std::size_t base = o * n * inner + in;
        float dot = 0.0f;
        for (std::size_t j = 0; j < n; ++j) dot += g[base + j * inner] * y[base + j * inner];
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t k = base + j * inner;
          gx[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta, float eps) {
  if (!(eps > 0.0f)) throw ShapeError("layernorm: eps must be positive");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layernorm: gamma/beta " + shape_str(gamma.shape()) + "/" +
                     shape_str(beta.shape()) + " do not match last dim of " +
                     shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<float> out(x.numel());
  std::vector<float> xhat(x.numel());
  std::vector<float> rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const float* xr = xd.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const float rs = static_cast<float>(1.0 / std::sqrt(var + eps));
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const float h = (xr[j] - static_cast<float>(mu)) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gd[j] + bd[j];
    }
  }
  const bool rec = recording({&x, &gamma, &beta});
  Tensor result(x.shape(), std::move(out));
  return finish("layernorm", result, rec,
                [x, gamma, beta, result, xhat = std::move(xhat), rstd = std::move(rstd), rows,
                 d]() mutable {
                  auto g = result.grad();
                  auto gd = gamma.data();
                  if (gamma.requires_grad()) {
                    auto gg = gamma.mutable_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < d; ++j) gg[j] += g[r * d + j] * xhat[r * d + j];
                  }
                  if (beta.requires_grad()) {
                    auto gb = beta.mutable_grad();
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < d; ++j) gb[j] += g[r * d + j];
                  }
                  if (x.requires_grad()) {
                    auto gx = x.mutable_grad();
                    const float invd = 1.0f / static_cast<float>(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      float mean_g = 0.0f, mean_gx = 0.0f;
                      for (std::size_t j = 0; j < d; ++j) {
                        const float gh = g[r * d + j] * gd[j];
                        mean_g += gh;
                        mean_gx += gh * xhat[r * d + j];
                      }
                      mean_g *= invd;
                      mean_gx *= invd;
                      for (std::size_t j = 0; j < d; ++j) {
                        const float gh = g[r * d + j] * gd[j];
                        gx[r * d + j] += rstd[r] * (gh - mean_g - xhat[r * d + j] * mean_gx);
                      }
                    }
                  }
                });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  const bool rec = recording({&x});
  Tensor result(std::move(shape), std::vector<float>(x.data().begin(), x.data().end()));
  return finish("reshape", result, rec, [x, result]() mutable {
    auto g = result.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count) {
  require_rank(x, 2, "slice_cols");
  const std::size_t r = x.dim(0), c = x.dim(1);
  if (count == 0 || start + count > c) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", " +
                     std::to_string(start + count) + ") out of range for " + shape_str(x.shape()));
  }
  std::vector<float> out(r * count);
  auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < count; ++j) out[i * count + j] = xd[i * c + start + j];
  const bool rec = recording({&x});
  Tensor result({r, count}, std::move(out));
  return finish("slice_cols", result, rec, [x, result, r, c, start, count]() mutable {
    auto g = result.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < count; ++j) gx[i * c + start + j] += g[i * count + j];
  });
}

Tensor concat_cols(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts[0].dim(0);
  std::size_t c = 0;
  bool rec = false;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != r) {
      throw ShapeError("concat_cols: row count mismatch " + shape_str(parts[0].shape()) + " vs " +
                       shape_str(p.shape()));
    }
    c += p.dim(1);
    rec = rec || recording({&p});
  }
  std::vector<float> out(r * c);
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    const std::size_t pc = p.dim(1);
    auto pd = p.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pc; ++j) out[i * c + off + j] = pd[i * pc + j];
    off += pc;
  }
  Tensor result({r, c}, std::move(out));
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return finish("concat_cols", result, rec, [inputs, result, r, c]() mutable {
    auto g = result.grad();
    std::size_t off = 0;
    for (Tensor& p : inputs) {
      const std::size_t pc = p.dim(1);
      if (p.requires_grad()) {
        auto gp = p.mutable_grad();
        for (std::size_t i = 0; i < r; ++i)
          for (std::size_t j = 0; j < pc; ++j) gp[i * pc + j] += g[i * c + off + j];
      }
      off += pc;
    }
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts[0].dim(1);
  std::size_t r = 0;
  bool rec = false;
  for (const Tensor& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != c) {
      throw ShapeError("concat_rows: column count mismatch " + shape_str(parts[0].shape()) +
                       " vs " + shape_str(p.shape()));
    }
    r += p.dim(0);
    rec = rec || recording({&p});
  }
  std::vector<float> out;
  out.reserve(r * c);
  for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  Tensor result({r, c}, std::move(out));
  std::vector<Tensor> inputs(parts.begin(), parts.end());
  return finish("concat_rows", result, rec, [inputs, result]() mutable {
    auto g = result.grad();
    std::size_t off = 0;
    for (Tensor& p : inputs) {
      const std::size_t n = p.numel();
      if (p.requires_grad()) {
        auto gp = p.mutable_grad();
        for (std::size_t i = 0; i < n; ++i) gp[i] += g[off + i];
      }
      off += n;
    }
  });
}

Tensor mean_rows(const Tensor& x) {
  require_rank(x, 2, "mean_rows");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<float> out(c, 0.0f);
  auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += xd[i * c + j];
  const float inv = 1.0f / static_cast<float>(r);
  for (float& v : out) v *= inv;
  const bool rec = recording({&x});
  Tensor result({1, c}, std::move(out));
  return finish("mean_rows", result, rec, [x, result, r, c, inv]() mutable {
    auto g = result.grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j] * inv;
  });
}

Tensor patchify(const Tensor& image, std::size_t patch) {
  require_rank(image, 3, "patchify");
  const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patchify: image " + shape_str(image.shape()) +
                     " is not divisible into patches of " + std::to_string(patch));
  }
  const std::size_t gh = h / patch, gw = w / patch;
  const std::size_t m = gh * gw, width = ch * patch * patch;
  // index[k] = source offset of output element k
  std::vector<std::size_t> index(m * width);
  for (std::size_t py = 0; py < gh; ++py)
    for (std::size_t px = 0; px < gw; ++px)
      for (std::size_t c = 0; c < ch; ++c)
        for (std::size_t y = 0; y < patch; ++y)
          for (std::size_t x = 0; x < patch; ++x) {
            const std::size_t row = py * gw + px;
            const std::size_t col = (c * patch + y) * patch + x;
            index[row * width + col] = (c * h + py * patch + y) * w + px * patch + x;
          }
  std::vector<float> out(index.size());
  auto src = image.data();
  for (std::size_t k = 0; k < index.size(); ++k) out[k] = src[index[k]];
  const bool rec = recording({&image});
  Tensor result({m, width}, std::move(out));
  return finish("patchify", result, rec, [image, result, index = std::move(index)]() mutable {
    auto g = result.grad();
    auto gi = image.mutable_grad();
    for (std::size_t k = 0; k < index.size(); ++k) gi[index[k]] += g[k];
  });
}

Tensor mse(const Tensor& pred, float target) {
  const Tensor diff = sub(pred, Tensor::scalar(target));
  return mean(mul(diff, diff));
}

}  // namespace qfm::ops
