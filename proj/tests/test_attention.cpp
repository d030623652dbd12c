#include <gtest/gtest.h>

#include "cirrus/affinity_tracker.h"
#include "cirrus/attention.h"
#include "oracles.h"

using namespace cirrus;

namespace {

void randomize_gamma(torch::Tensor& gamma) {
  torch::NoGradGuard g;
  gamma.uniform_(0.3, 1.2);
}

oracle::GaborAttentionWeights weights_of(GaborAttention& m) {
  oracle::GaborAttentionWeights w;
  w.q_base = m->query->base_weight;
  w.k_base = m->key->base_weight;
  w.v_base = m->value->base_weight;
  w.filters = m->query->bank_filters;
  w.proj_w = m->project->weight;
  w.proj_b = m->project->bias;
  w.gamma = m->gamma.item<double>();
  return w;
}

GaborAttentionOptions small_gabor(int64_t g = 4) {
  GaborAttentionOptions o;
  o.bank = GaborBankOptions::for_kernel(g, 3);
  o.orientation_channels = 2;
  return o;
}

}  // namespace

TEST(PositionalAttention, ZeroGammaIsIdentity) {
  PositionalAttention m(8);
  auto x = torch::randn({2, 8, 5, 5});
  EXPECT_TRUE(torch::equal(m(x), x));
}

TEST(PositionalAttention, ConstantInputGivesUniformAffinity) {
  PositionalAttention m(4);
  auto a = m->affinity(torch::full({1, 4, 3, 4}, 0.8));
  EXPECT_TRUE(torch::allclose(a, torch::full_like(a, 1.0 / 12.0), 1e-6, 1e-7));
}

TEST(PositionalAttention, ReducedWidthIsEighthWithFloorOfOne) {
  EXPECT_EQ(PositionalAttention(64)->reduced_channels(), 8);
  EXPECT_EQ(PositionalAttention(12)->reduced_channels(), 1);
  EXPECT_EQ(PositionalAttention(3)->reduced_channels(), 1);
}

TEST(PositionalAttention, MatchesBruteForceOracle) {
  for (int seed = 0; seed < 20; ++seed) {
    torch::manual_seed(seed);
    PositionalAttention m(2);
    m->to(torch::kFloat64);
    randomize_gamma(m->gamma);
    auto x = torch::randn({1, 2, 3, 3}, torch::kFloat64);
    auto ref = oracle::positional_attention(x, m->query->weight, m->query->bias, m->key->weight, m->key->bias,
                                            m->value->weight, m->value->bias, m->gamma.item<double>());
    EXPECT_LE(oracle::max_abs_diff(m(x), ref), 1e-6);
  }
}

TEST(PositionalAttention, InferencePathMatchesAutogradPath) {
  torch::manual_seed(9);
  PositionalAttention m(16);
  randomize_gamma(m->gamma);
  auto x = torch::randn({2, 16, 6, 6});
  auto with_grad = m(x);
  torch::NoGradGuard g;
  EXPECT_TRUE(torch::allclose(m(x), with_grad, 1e-5, 1e-6));
}

TEST(PositionalAttention, InferenceAffinityIsTracked) {
  PositionalAttention m(8);
  torch::NoGradGuard g;
  const auto before = AffinityTracker::instance().live();
  AffinityPeakScope scope;
  {
    auto y = m(torch::randn({1, 8, 4, 4}));
    EXPECT_EQ(y.size(2), 4);
  }
  EXPECT_EQ(scope.peak() - before, 16 * 16);
  EXPECT_EQ(AffinityTracker::instance().live(), before);
}

TEST(PositionalAttention, RejectsNonFiniteInput) {
  PositionalAttention m(4);
  auto x = torch::randn({1, 4, 3, 3});
  x[0][1][1][1] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(m(x), c10::Error);
}

TEST(ChannelAttention, ZeroGammaIsIdentity) {
  ChannelAttention m;
  auto x = torch::randn({2, 5, 4, 4});
  EXPECT_TRUE(torch::equal(m(x), x));
}

TEST(ChannelAttention, SingleChannelAffinityIsOne) {
  ChannelAttention m;
  randomize_gamma(m->gamma);
  auto x = torch::randn({1, 1, 4, 4});
  auto a = m->affinity(x);
  EXPECT_EQ(a.sizes(), (std::vector<int64_t>{1, 1, 1}));
  EXPECT_FLOAT_EQ(a.item<float>(), 1.0f);
  EXPECT_TRUE(torch::allclose(m(x), m->gamma * x + x));
}

TEST(ChannelAttention, MatchesBruteForceOracle) {
  for (int seed = 0; seed < 20; ++seed) {
    torch::manual_seed(seed);
    ChannelAttention m;
    m->to(torch::kFloat64);
    randomize_gamma(m->gamma);
    auto x = torch::randn({1, 3, 4, 4}, torch::kFloat64) * 0.5;
    EXPECT_LE(oracle::max_abs_diff(m(x), oracle::channel_attention(x, m->gamma.item<double>())), 1e-6);
  }
}

TEST(ChannelAttention, PermutationEquivariant) {
  ChannelAttention m;
  randomize_gamma(m->gamma);
  m->to(torch::kFloat64);
  auto x = torch::randn({2, 6, 3, 3}, torch::kFloat64);
  auto perm = torch::tensor({3, 0, 5, 1, 4, 2}, torch::kLong);
  // Equal up to the order of the softmax and mixing sums.
  EXPECT_LE(oracle::max_abs_diff(m(x.index_select(1, perm)), m(x).index_select(1, perm)), 1e-12);
}

TEST(GaborAttention, ZeroGammaIsIdentity) {
  GaborAttention m(3, small_gabor());
  auto x = torch::randn({1, 3, 6, 6});
  EXPECT_TRUE(torch::equal(m(x), x));
}

TEST(GaborAttention, SingleOrientationPassesValuesThrough) {
  torch::manual_seed(2);
  GaborAttention m(2, small_gabor(1));
  randomize_gamma(m->gamma);
  auto x = torch::randn({1, 2, 5, 5});
  auto a = m->affinity(x);
  EXPECT_EQ(a.sizes(), (std::vector<int64_t>{1, 1, 1}));
  EXPECT_FLOAT_EQ(a.item<float>(), 1.0f);
  auto v = m->value(x).flatten(1, 2);
  auto expected = m->gamma * m->project(v) + x;
  EXPECT_TRUE(torch::allclose(m(x), expected, 1e-5, 1e-6));
}

TEST(GaborAttention, MatchesBruteForceOracle) {
  for (int seed = 0; seed < 20; ++seed) {
    torch::manual_seed(seed);
    GaborAttention m(2, small_gabor(4));
    m->to(torch::kFloat64);
    randomize_gamma(m->gamma);
    auto x = torch::randn({1, 2, 6, 6}, torch::kFloat64) * 0.3;
    EXPECT_LE(oracle::max_abs_diff(m(x), oracle::gabor_attention(x, weights_of(m))), 1e-6);
  }
}

TEST(GaborAttention, ChannelMismatchThrows) {
  GaborAttention m(3, small_gabor());
  EXPECT_THROW(m(torch::randn({1, 4, 6, 6})), c10::Error);
}

TEST(Affinities, RowsAreStochastic) {
  torch::manual_seed(11);
  auto x = torch::randn({2, 8, 5, 5});
  PositionalAttention p(8);
  ChannelAttention c;
  GaborAttention g(8, small_gabor());
  for (const auto& a : {p->affinity(x), c->affinity(x), g->affinity(x)}) {
    auto rows = a.sum(-1);
    EXPECT_LE((rows - 1.0).abs().max().item<double>(), 1e-6);
  }
}

TEST(TriAttention, IdentityAtInitialization) {
  TriAttention m(TriAttentionOptions(6));
  auto x = torch::randn({2, 6, 5, 5});
  EXPECT_TRUE(torch::equal(m(x), x));
}

TEST(TriAttention, ZeroInputGivesZeroOutput) {
  torch::manual_seed(1);
  TriAttention m(TriAttentionOptions(4));
  randomize_gamma(m->positional->gamma);
  randomize_gamma(m->channel->gamma);
  randomize_gamma(m->gabor->gamma);
  // Biases would make the projections affine; zero them to test the linear paths.
  torch::NoGradGuard g;
  for (auto& p : m->named_parameters())
    if (p.key().find("bias") != std::string::npos) p.value().zero_();
  auto y = m(torch::zeros({1, 4, 6, 6}));
  EXPECT_EQ(y.abs().max().item<double>(), 0.0);
}

TEST(TriAttention, EqualsBranchSumWithSharedResidual) {
  for (int seed = 0; seed < 3; ++seed) {
    torch::manual_seed(seed);
    TriAttentionOptions o(4);
    o.gabor = small_gabor();
    TriAttention m(o);
    m->to(torch::kFloat64);
    randomize_gamma(m->positional->gamma);
    randomize_gamma(m->channel->gamma);
    randomize_gamma(m->gabor->gamma);
    auto x = torch::randn({1, 4, 5, 5}, torch::kFloat64) * 0.5;
    auto expected = m->positional(x) + m->channel(x) + m->gabor(x) - 2 * x;
    EXPECT_LE(oracle::max_abs_diff(m(x), expected), 1e-6);
  }
}

TEST(TriAttention, WithoutGaborIsDualAttention) {
  TriAttentionOptions o(4);
  o.use_gabor = false;
  TriAttention m(o);
  EXPECT_FALSE(m->gabor);
  randomize_gamma(m->positional->gamma);
  randomize_gamma(m->channel->gamma);
  auto x = torch::randn({1, 4, 4, 4});
  EXPECT_TRUE(torch::allclose(m(x), m->positional(x) + m->channel(x) - x, 1e-5, 1e-6));
}

TEST(Attention, ShapePreserved) {
  auto x = torch::randn({2, 8, 7, 5});
  TriAttention m(TriAttentionOptions(8));
  EXPECT_EQ(m(x).sizes(), x.sizes());
  EXPECT_EQ(m->positional(x).sizes(), x.sizes());
  EXPECT_EQ(m->channel(x).sizes(), x.sizes());
  EXPECT_EQ(m->gabor(x).sizes(), x.sizes());
}

namespace {

// Compares the autograd gradient of sum(w * m(x)) with central differences,
// for the input and for every parameter.
template <typename M>
void expect_gradients_match(M& m, const torch::Tensor& x0) {
  m->to(torch::kFloat64);
  torch::manual_seed(77);
  for (auto& p : m->parameters())
    if (p.numel() == 1) randomize_gamma(p);
  auto x = x0.to(torch::kFloat64);
  auto w = torch::randn(m(x).sizes(), torch::kFloat64);
  auto loss = [&](const torch::Tensor& in) {
    torch::NoGradGuard g;
    return (m(in) * w).sum().template item<double>();
  };

  auto xg = x.clone().requires_grad_(true);
  m->zero_grad();
  (m(xg) * w).sum().backward();
  EXPECT_LE(oracle::norm_relative_error(xg.grad(), oracle::numeric_gradient(loss, x), 1e-6), 1e-3);

  for (auto& p : m->named_parameters()) {
    auto analytic = p.value().grad().clone();
    auto numeric = oracle::numeric_gradient(
        [&](const torch::Tensor& v) {
          torch::NoGradGuard g;
          auto saved = p.value().clone();
          p.value().copy_(v);
          const double out = loss(x);
          p.value().copy_(saved);
          return out;
        },
        p.value());
    // Key biases shift every score in a row equally, so their gradient is zero.
    EXPECT_LE(oracle::norm_relative_error(analytic, numeric, 1e-6), 1e-3) << p.key();
  }
}

}  // namespace

TEST(AttentionGradients, Positional) {
  torch::manual_seed(3);
  PositionalAttention m(2);
  expect_gradients_match(m, torch::randn({1, 2, 4, 4}));
}

TEST(AttentionGradients, Channel) {
  torch::manual_seed(4);
  ChannelAttention m;
  expect_gradients_match(m, torch::randn({1, 2, 4, 4}) * 0.5);
}

TEST(AttentionGradients, Gabor) {
  torch::manual_seed(5);
  GaborAttention m(2, small_gabor());
  expect_gradients_match(m, torch::randn({1, 2, 4, 4}) * 0.5);
}

TEST(AttentionGradients, Tri) {
  torch::manual_seed(6);
  TriAttentionOptions o(2);
  o.gabor = small_gabor();
  TriAttention m(o);
  expect_gradients_match(m, torch::randn({1, 2, 4, 4}) * 0.5);
}
