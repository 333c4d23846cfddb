#include <gtest/gtest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "qfm/error.hpp"
#include "qfm/model.hpp"
#include "qfm/ops.hpp"
#include "qfm/params.hpp"
#include "qfm/qcc.hpp"

using namespace qfm;
using qfm::testing::gradcheck;
using qfm::testing::random_tensor;
using Inputs = std::vector<Tensor>;

namespace {

constexpr int kSeeds = 20;
constexpr double kTol = 1e-3;

std::size_t dim(Rng& rng) { return 1 + rng.index(8); }

// Keeps values clear of the relu kink so the finite difference is smooth.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t = random_tensor(std::move(shape), rng);
  for (float& v : t.mutable_data()) v = v < 0 ? v - 0.1f : v + 0.1f;
  return t;
}

template <typename Make>
void check_op(const char* name, Make make, float h = 5e-3f) {
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(1000 + static_cast<std::uint64_t>(seed));
    auto [fn, inputs] = make(rng);
    const auto r = gradcheck(fn, inputs, rng, h);
    EXPECT_LE(r.rel_error, kTol) << name << " seed " << seed << " input " << r.input;
  }
}

}  // namespace

TEST(Gradients, Matmul) {
  check_op("matmul", [](Rng& rng) {
    const auto m = dim(rng), k = dim(rng), n = dim(rng);
    return std::pair{std::function([](const Inputs& x) { return ops::matmul(x[0], x[1]); }),
                     Inputs{random_tensor({m, k}, rng), random_tensor({k, n}, rng)}};
  });
}

TEST(Gradients, Transpose) {
  check_op("transpose", [](Rng& rng) {
    return std::pair{std::function([](const Inputs& x) { return ops::transpose(x[0]); }),
                     Inputs{random_tensor({dim(rng), dim(rng)}, rng)}};
  });
}

TEST(Gradients, ElementwiseBinary) {
  using Fn = Tensor (*)(const Tensor&, const Tensor&);
  const std::pair<const char*, Fn> cases[] = {{"add", ops::add}, {"sub", ops::sub}, {"mul", ops::mul}};
  for (const auto& [name, op] : cases) {
    check_op(name, [op](Rng& rng) {
      const Shape s{dim(rng), dim(rng)};
      return std::pair{std::function([op](const Inputs& x) { return op(x[0], x[1]); }),
                       Inputs{random_tensor(s, rng), random_tensor(s, rng)}};
    });
    // Single-element operand on either side.
    check_op(name, [op](Rng& rng) {
      const Shape s{dim(rng), dim(rng)};
      return std::pair{std::function([op](const Inputs& x) { return ops::add(op(x[0], x[1]), ops::scale(op(x[1], x[0]), 0.5f)); }),
                       Inputs{random_tensor(s, rng), random_tensor({1}, rng)}};
    });
  }
}

TEST(Gradients, Scale) {
  check_op("scale", [](Rng& rng) {
    const float s = static_cast<float>(rng.uniform(-3, 3));
    return std::pair{std::function([s](const Inputs& x) { return ops::scale(x[0], s); }),
                     Inputs{random_tensor({dim(rng), dim(rng)}, rng)}};
  });
}

TEST(Gradients, AddRowwiseAndLinear) {
  check_op("add_rowwise", [](Rng& rng) {
    const auto n = dim(rng), d = dim(rng);
    return std::pair{std::function([](const Inputs& x) { return ops::add_rowwise(x[0], x[1]); }),
                     Inputs{random_tensor({n, d}, rng), random_tensor({d}, rng)}};
  });
  check_op("linear", [](Rng& rng) {
    const auto n = dim(rng), in = dim(rng), out = dim(rng);
    return std::pair{std::function([](const Inputs& x) { return ops::linear(x[0], x[1], x[2]); }),
                     Inputs{random_tensor({n, in}, rng), random_tensor({in, out}, rng), random_tensor({out}, rng)}};
  });
}

TEST(Gradients, Activations) {
  check_op("gelu", [](Rng& rng) {
    return std::pair{std::function([](const Inputs& x) { return ops::gelu(x[0]); }),
                     Inputs{random_tensor({dim(rng), dim(rng)}, rng, -3, 3)}};
  });
  check_op("relu", [](Rng& rng) {
    return std::pair{std::function([](const Inputs& x) { return ops::relu(x[0]); }),
                     Inputs{away_from_zero({dim(rng), dim(rng)}, rng)}};
  });
}

TEST(Gradients, Reductions) {
  check_op("sum", [](Rng& rng) {
    return std::pair{std::function([](const Inputs& x) { return ops::sum(x[0]); }),
                     Inputs{random_tensor({dim(rng), dim(rng)}, rng)}};
  });
  check_op("mean", [](Rng& rng) {
    return std::pair{std::function([](const Inputs& x) { return ops::mean(x[0]); }),
                     Inputs{random_tensor({dim(rng), dim(rng)}, rng)}};
  });
  check_op("mean_rows", [](Rng& rng) {
    return std::pair{std::function([](const Inputs& x) { return ops::mean_rows(x[0]); }),
                     Inputs{random_tensor({dim(rng), dim(rng)}, rng)}};
  });
  check_op("mse", [](Rng& rng) {
    const float target = static_cast<float>(rng.uniform(-1, 1));
    return std::pair{std::function([target](const Inputs& x) { return ops::mse(x[0], target); }),
                     Inputs{random_tensor({dim(rng), 1}, rng)}};
  });
}

TEST(Gradients, Softmax) {
  for (std::size_t axis : {0u, 1u}) {
    check_op("softmax", [axis](Rng& rng) {
      return std::pair{std::function([axis](const Inputs& x) { return ops::softmax(x[0], axis); }),
                       Inputs{random_tensor({dim(rng), dim(rng)}, rng, -2, 2)}};
    });
  }
}

TEST(Gradients, Layernorm) {
  check_op("layernorm", [](Rng& rng) {
    // Two columns normalize to +-1 whatever the input, leaving no gradient
    // worth comparing.
    const auto n = dim(rng), d = 3 + rng.index(6);
    return std::pair{std::function([](const Inputs& x) { return ops::layernorm(x[0], x[1], x[2], 1e-5f); }),
                     Inputs{random_tensor({n, d}, rng, -2, 2), random_tensor({d}, rng, 0.5, 1.5),
                            random_tensor({d}, rng)}};
  });
}

TEST(Gradients, ShapeOps) {
  check_op("reshape", [](Rng& rng) {
    const auto a = dim(rng), b = dim(rng);
    return std::pair{std::function([a, b](const Inputs& x) { return ops::reshape(x[0], {b, a}); }),
                     Inputs{random_tensor({a, b}, rng)}};
  });
  check_op("slice_cols", [](Rng& rng) {
    const auto n = dim(rng), d = 2 + rng.index(7);
    const auto start = rng.index(d - 1);
    const auto count = 1 + rng.index(d - start);
    return std::pair{std::function([start, count](const Inputs& x) { return ops::slice_cols(x[0], start, count); }),
                     Inputs{random_tensor({n, d}, rng)}};
  });
  check_op("concat_cols", [](Rng& rng) {
    const auto n = dim(rng);
    return std::pair{std::function([](const Inputs& x) { return ops::concat_cols(x); }),
                     Inputs{random_tensor({n, dim(rng)}, rng), random_tensor({n, dim(rng)}, rng)}};
  });
  check_op("concat_rows", [](Rng& rng) {
    const auto d = dim(rng);
    return std::pair{std::function([](const Inputs& x) { return ops::concat_rows(x); }),
                     Inputs{random_tensor({dim(rng), d}, rng), random_tensor({dim(rng), d}, rng)}};
  });
  check_op("patchify", [](Rng& rng) {
    const std::size_t p = 1 + rng.index(4), g = 1 + rng.index(2), c = 1 + rng.index(3);
    return std::pair{std::function([p](const Inputs& x) { return ops::patchify(x[0], p); }),
                     Inputs{random_tensor({c, p * g, p * g}, rng)}};
  });
}

TEST(Gradients, FeatureMixing) {
  check_op("mix_features", [](Rng& rng) {
    const auto n = dim(rng), d = dim(rng);
    std::vector<FeatureMap> a{{random_tensor({n, d}, rng)}}, b{{random_tensor({n, d}, rng)}, {random_tensor({n, d}, rng)}};
    const MixWeights w{0.2f, 0.3f, 2};
    return std::pair{std::function([a, b, w](const Inputs& x) { return mix_features(FeatureMap{x[0]}, a, b, w).tokens; }),
                     Inputs{random_tensor({n, d}, rng)}};
  });
}

TEST(Gradients, DiamondGraphAccumulates) {
  // x feeds two branches that meet again: d/dx (x*x + 3x) = 2x + 3.
  Tensor x({3}, {0.5f, -1.0f, 2.0f}, true);
  {
    Tape tape;
    Tensor y = ops::add(ops::mul(x, x), ops::scale(x, 3.0f));
    tape.backward(ops::sum(y));
  }
  const auto g = x.grad();
  EXPECT_FLOAT_EQ(g[0], 4.0f);
  EXPECT_FLOAT_EQ(g[1], 1.0f);
  EXPECT_FLOAT_EQ(g[2], 7.0f);
}

TEST(Gradients, TapeClearsAfterBackwardAndNoGradRecordsNothing) {
  Tensor x({2}, {1.0f, 2.0f}, true);
  Tape tape;
  Tensor y = ops::sum(ops::mul(x, x));
  EXPECT_EQ(tape.size(), 2u);
  tape.backward(y);
  EXPECT_EQ(tape.size(), 0u);
  {
    NoGradGuard ng;
    Tensor z = ops::sum(x);
    EXPECT_FALSE(z.requires_grad());
  }
  EXPECT_EQ(tape.size(), 0u);
}

TEST(Gradients, BackwardNeedsScalarLoss) {
  Tensor x({2}, {1.0f, 2.0f}, true);
  Tape tape;
  Tensor y = ops::scale(x, 2.0f);
  EXPECT_THROW(tape.backward(y), ShapeError);
}

TEST(Gradients, NonFiniteOutputIsRejected) {
  Tensor x({1}, {1e30f});
  EXPECT_THROW(ops::mul(x, x), NumericError);
}

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.encoder.image_size = 8;
  cfg.encoder.patch_size = 4;
  cfg.encoder.channels = 1;
  cfg.encoder.embed_dim = 8;
  cfg.encoder.num_layers = 1;
  cfg.encoder.num_heads = 2;
  cfg.encoder.mlp_ratio = 2;
  cfg.decoder.num_queries = 2;
  cfg.decoder.num_layers = 1;
  cfg.ln_eps = 1e-5f;
  // Larger weights than the training default so the score responds visibly.
  cfg.init_std = 0.3f;
  return cfg;
}

}  // namespace

TEST(Gradients, ScoreWithRespectToInputImage) {
  const ModelConfig cfg = toy_config();
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(7000 + static_cast<std::uint64_t>(seed));
    ParamStore params = init_params(cfg, rng);
    params.set_requires_grad(false);
    const auto fn = [&](const Inputs& x) { return decode(encode(x[0], cfg, params), cfg, params); };
    const auto r = gradcheck(fn, {random_tensor({1, 8, 8}, rng, 0, 1)}, rng);
    EXPECT_LE(r.rel_error, kTol) << "seed " << seed;
  }
}

TEST(Gradients, ScoreWithRespectToParameters) {
  const ModelConfig cfg = toy_config();
  for (int seed = 0; seed < kSeeds; ++seed) {
    Rng rng(9000 + static_cast<std::uint64_t>(seed));
    ParamStore params = init_params(cfg, rng);
    const Tensor image = random_tensor({1, 8, 8}, rng, 0, 1);
    std::vector<std::string> names;
    Inputs tensors;
    for (auto& [name, t] : params.entries()) {
      names.push_back(name);
      tensors.push_back(t);
    }
    const auto fn = [&](const Inputs&) { return decode(encode(image, cfg, params), cfg, params); };
    // Joint error: some parameters (attention key biases) have an exactly
    // zero gradient, where a per-tensor ratio only measures rounding noise.
    const auto r = gradcheck(fn, tensors, rng);
    EXPECT_LE(r.joint_rel_error, kTol) << "seed " << seed << " worst param " << names[r.input];
  }
}
