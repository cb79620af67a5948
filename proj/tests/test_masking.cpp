#include <gtest/gtest.h>

#include <algorithm>
#include <memory>
#include <random>

#include "cloze/cor_model.hpp"
#include "cloze/data.hpp"
#include "cloze/leak_probe.hpp"
#include "cloze/mask.hpp"

using namespace cloze;

namespace {

std::string grid(const AttentionMask& m, std::size_t bank = 0) {
  std::string out;
  const auto& b = m.banks()[bank];
  for (std::size_t t = 0; t < m.n_query(); ++t) {
    for (std::size_t j = 0; j < b.n_key; ++j) out += m.bank_allowed(bank, t, j) ? 'A' : 'D';
    out += '|';
  }
  return out;
}

std::set<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::set<std::size_t> s;
  for (std::size_t i = lo; i <= hi; ++i) s.insert(i);
  return s;
}

CorConfig tiny_cor(CorVariant v = CorVariant::cor) {
  CorConfig c;
  c.vocab_size = 8;
  c.model_dim = 8;
  c.heads = 2;
  c.inner_dim = 16;
  c.stack_depth = 2;
  c.variant = v;
  return c;
}

}  // namespace

TEST(ForwardMask, Patterns) {
  EXPECT_EQ(grid(build_forward_mask(1)), "A|");
  EXPECT_EQ(grid(build_forward_mask(3)), "ADD|AAD|AAA|");
  EXPECT_THROW(build_forward_mask(0), ContractError);
}

TEST(BackwardMask, Patterns) {
  EXPECT_EQ(grid(build_backward_mask(1)), "D|");
  EXPECT_EQ(grid(build_backward_mask(3)), "DDA|DDD|DDD|");
  const AttentionMask m = build_backward_mask(6);
  EXPECT_TRUE(m.row_denied(4));
  EXPECT_TRUE(m.row_denied(5));
  EXPECT_FALSE(m.row_denied(3));
  EXPECT_THROW(build_backward_mask(0), ContractError);
}

TEST(FusionMask, Patterns) {
  const AttentionMask m = build_fusion_mask(3);
  ASSERT_EQ(m.banks().size(), 2u);
  EXPECT_EQ(grid(m, 0), "ADD|AAD|AAA|");
  EXPECT_EQ(grid(m, 1), "AAA|DAA|DDA|");
  EXPECT_EQ(m.n_key(), 6u);
  EXPECT_THROW(build_fusion_mask(0), ContractError);
}

TEST(MaskDump, GridPerBank) {
  EXPECT_EQ(build_fusion_mask(2).dump(),
            "# bank forward (2x2)\n1.\n11\n# bank backward (2x2)\n11\n.1\n");
}

TEST(Visibility, EmptyStackIsIdentity) {
  const auto vis = visibility_oracle(StackDescription(4));
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(vis[t], std::set<std::size_t>{t + 1});
}

TEST(Visibility, ForwardRowOneSeesOnlyFirstToken) {
  StackDescription s(3);
  s.add_block(s.input(), {s.input()}, build_forward_mask(3));
  EXPECT_EQ(visibility_oracle(s)[0], std::set<std::size_t>{1});
}

TEST(Visibility, BackwardRowExcludesTarget) {
  StackDescription s(4);
  s.add_block(s.add_positions(), {s.input()}, build_backward_mask(4), false);
  const auto vis = visibility_oracle(s);
  EXPECT_EQ(vis[0], (std::set<std::size_t>{3, 4}));
  EXPECT_TRUE(vis[2].empty());
}

TEST(Visibility, StackedForwardIsIdempotent) {
  StackDescription one(3), two(3);
  one.add_block(one.input(), {one.input()}, build_forward_mask(3));
  std::size_t a = two.add_block(two.input(), {two.input()}, build_forward_mask(3));
  two.add_block(a, {a}, build_forward_mask(3));
  EXPECT_EQ(visibility_oracle(one), visibility_oracle(two));
}

TEST(Visibility, FusionExamples) {
  const auto v3 = visibility_oracle(cor_stack(3, 1, 1, false));
  EXPECT_EQ(v3[0], (std::set<std::size_t>{1, 3}));
  const auto v4 = visibility_oracle(cor_stack(4, 2, 1, false));
  EXPECT_EQ(v4[1], (std::set<std::size_t>{1, 2, 4}));
}

TEST(Visibility, CorSeesEverythingButTheTarget) {
  for (std::size_t depth : {1u, 2u, 3u})
    for (std::size_t n = 1; n <= 16; ++n) {
      const auto vis = visibility_oracle(cor_stack(n, depth, 1, false));
      for (std::size_t t = 1; t <= n; ++t) {
        std::set<std::size_t> expect = range(1, t);
        for (std::size_t j = t + 2; j <= n; ++j) expect.insert(j);
        EXPECT_EQ(vis[t - 1], expect) << "n=" << n << " t=" << t << " depth=" << depth;
      }
    }
}

TEST(Visibility, UnidirectionalIsCausal) {
  for (std::size_t n = 1; n <= 16; ++n) {
    const auto vis = visibility_oracle(cor_stack(n, 2, 1, true));
    for (std::size_t t = 1; t <= n; ++t) EXPECT_EQ(vis[t - 1], range(1, t));
  }
}

TEST(Visibility, MonotoneUnderStacking) {
  for (std::size_t n = 2; n <= 9; ++n) {
    StackDescription s(n);
    std::size_t top = s.input();
    auto prev = visibility_all(s).back();
    const MaskBuilder builders[] = {build_forward_mask, build_backward_mask};
    for (int layer = 0; layer < 6; ++layer) {
      top = s.add_block(top, {top}, builders[layer % 2](n));
      const auto cur = visibility_all(s).back();
      for (std::size_t t = 0; t < n; ++t)
        EXPECT_TRUE(std::includes(cur[t].begin(), cur[t].end(), prev[t].begin(), prev[t].end()));
      prev = cur;
    }
  }
}

TEST(Visibility, BankShapeMismatchThrows) {
  StackDescription s(3);
  s.add_block(s.input(), {s.input()}, build_forward_mask(4));
  EXPECT_THROW(visibility_oracle(s), ContractError);
  StackDescription two(3);
  two.add_block(two.input(), {two.input()}, build_fusion_mask(3));
  EXPECT_THROW(visibility_oracle(two), ContractError);
}

// The oracle against perturbation on random networks for several layouts.
TEST(Visibility, AgreesWithProbe) {
  for (std::size_t n : {1u, 2u, 3u, 5u, 7u}) {
    std::vector<StackDescription> stacks;
    for (const MaskBuilder& b : {MaskBuilder(build_forward_mask), MaskBuilder(build_backward_mask)}) {
      StackDescription s(n);
      s.add_block(s.input(), {s.input()}, b(n));
      stacks.push_back(s);
      for (bool residual : {false, true}) {
        StackDescription p(n);
        p.add_block(p.add_positions(), {p.input()}, b(n), residual);
        stacks.push_back(p);
      }
    }
    StackDescription f(n);
    f.add_block(f.input(), {f.input(), f.input()}, build_fusion_mask(n));
    stacks.push_back(f);
    stacks.push_back(cor_stack(n, 2, 1, false));
    for (const auto& s : stacks) {
      const auto vis = visibility_oracle(s);
      Tensor best({n, n});
      for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto table = sensitivity_table(stack_probe_subject(s, 4, 2, seed));
        for (std::size_t i = 0; i < best.size(); ++i) {
          EXPECT_NEAR(table.analytic.values[i], table.numeric.values[i], kLeakAgreement);
          best.values[i] = std::max(best.values[i], table.analytic.values[i]);
        }
      }
      for (std::size_t t = 0; t < n; ++t)
        for (std::size_t j = 0; j < n; ++j) {
          if (vis[t].count(j + 1)) EXPECT_GT(best.at(t, j), 1e-6) << "n=" << n << " t=" << t + 1 << " j=" << j + 1;
          else EXPECT_EQ(best.at(t, j), 0.0) << "n=" << n << " t=" << t + 1 << " j=" << j + 1;
        }
    }
  }
}

TEST(LeakProbe, CorNeverSeesItsTarget) {
  std::vector<std::unique_ptr<CorModel>> models;
  for (std::size_t n : {1u, 4u, 11u}) {
    for (std::size_t t = 1; t + 1 <= n; ++t) {
      auto make = [&](std::uint64_t seed) {
        models.push_back(std::make_unique<CorModel>(tiny_cor(), seed));
        Sequence in{Vocabulary::sos};
        std::mt19937_64 rng(seed + 17);
        while (in.size() < n) in.push_back(3 + rng() % 5);
        return cor_probe_subject(*models.back(), in);
      };
      EXPECT_LE(leak_probe(make, t, t + 1, 3), 1e-9) << "n=" << n << " t=" << t;
    }
  }
}

TEST(LeakProbe, CorSeesTheCurrentToken) {
  CorModel model(tiny_cor(), 4);
  const Sequence in{1, 4, 5, 6, 7, 3};
  const ProbeSubject s = cor_probe_subject(model, in);
  for (std::size_t t = 1; t <= in.size(); ++t) EXPECT_GT(sensitivity(s, t, t).analytic, 1e-6);
}

TEST(LeakProbe, UnidirectionalIgnoresTheFuture) {
  CorModel model(tiny_cor(CorVariant::unicor), 2);
  const Sequence in{1, 4, 5, 6, 7};
  const auto table = sensitivity_table(cor_probe_subject(model, in));
  for (std::size_t t = 0; t < in.size(); ++t)
    for (std::size_t j = t + 1; j < in.size(); ++j) {
      EXPECT_EQ(table.analytic.at(t, j), 0.0);
      EXPECT_LE(table.numeric.at(t, j), 1e-9);
    }
}

TEST(LeakProbe, RejectsOutOfRangePositions) {
  CorModel model(tiny_cor(), 1);
  const ProbeSubject s = cor_probe_subject(model, {1, 4});
  EXPECT_THROW(sensitivity(s, 0, 1), ContractError);
  EXPECT_THROW(sensitivity(s, 1, 3), ContractError);
}

// Stack outputs must not move at all when hidden tokens change.
TEST(StackInvariance, ForwardAndBackwardAreBitwiseBlind) {
  const std::size_t n = 9;
  StackDescription fwd(n), bwd(n);
  std::size_t f = fwd.input();
  for (int i = 0; i < 2; ++i) f = fwd.add_block(f, {f}, build_forward_mask(n));
  std::size_t b = bwd.input();
  b = bwd.add_block(bwd.add_positions(), {b}, build_backward_mask(n));
  bwd.add_block(b, {b}, build_backward_mask(n));

  std::mt19937_64 rng(5);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    for (bool forward : {true, false}) {
      const ProbeSubject s = stack_probe_subject(forward ? fwd : bwd, 8, 2, seed);
      auto eval = [&](const Tensor& x) {
        Graph g;
        return g.value(s.map(g, g.input(x)));
      };
      const Tensor base = eval(s.embedded);
      for (std::size_t j = 0; j < n; ++j) {
        Tensor x = s.embedded;
        for (std::size_t d = 0; d < 8; ++d) x.at(j, d) += n01(rng);
        const Tensor moved = eval(x);
        // Forward row t (1-based) is blind to tokens > t; backward to tokens <= t+1.
        for (std::size_t t = 0; t < n; ++t) {
          const bool hidden = forward ? j > t : j <= t + 1;
          if (!hidden) continue;
          for (std::size_t c = 0; c < 8; ++c) EXPECT_EQ(base.at(t, c), moved.at(t, c));
        }
      }
    }
  }
}
