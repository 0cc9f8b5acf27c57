// Copyright 2026 The fmdacl Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "fmdacl/checkpoint.hpp"
#include "fmdacl/models.hpp"
#include "oracles.hpp"

using namespace fmdacl;
using models::BackboneKind;
using models::BackboneSpec;

namespace {

BackboneSpec spec_of(BackboneKind kind, int width, int depth) {
  BackboneSpec s;
  s.kind = kind;
  s.width = width;
  s.depth = depth;
  return s;
}

std::vector<double> flat_params(const models::Network& n) {
  std::vector<double> out;
  for (const auto& p : n.parameters()) out.insert(out.end(), p.var.value().storage().begin(), p.var.value().storage().end());
  return out;
}

class BothKinds : public ::testing::TestWithParam<BackboneKind> {};

}  // namespace

TEST_P(BothKinds, SameSeedSameParameters) {
  const auto spec = spec_of(GetParam(), 16, 2);
  EXPECT_EQ(flat_params(*models::build_network(spec, 5)), flat_params(*models::build_network(spec, 5)));
  EXPECT_NE(flat_params(*models::build_network(spec, 5)), flat_params(*models::build_network(spec, 6)));
}

TEST_P(BothKinds, ShapeContract) {
  auto net = models::build_network(spec_of(GetParam(), 16, 2), 1);
  Rng rng(1);
  const auto out = net->forward(oracle::random_tensor({2, 1, 64, 64}, rng, 0, 1), true);
  EXPECT_EQ(out.seg.shape(), (Shape{2, 15, 64, 64}));
  EXPECT_EQ(out.cls.shape(), (Shape{2, 7}));
}

TEST_P(BothKinds, ShapeContractAcrossSizes) {
  auto net = models::build_network(spec_of(GetParam(), 8, 2), 1);
  for (int s : {32, 64, 128, 256}) {
    const auto out = net->forward(Tensor({1, 1, s, s}, 0.5), false);
    EXPECT_EQ(out.seg.shape(), (Shape{1, 15, s, s}));
    EXPECT_EQ(out.cls.shape(), (Shape{1, 7}));
  }
}

TEST_P(BothKinds, RejectsIndivisibleInputNamingDivisor) {
  auto net = models::build_network(spec_of(GetParam(), 8, 3), 1);
  const int f = net->spec().downsampling_factor();
  try {
    net->forward(Tensor({1, 1, 3 * f + 2, 4 * f}, 0.0), false);
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("divisible by " + std::to_string(f)), std::string::npos) << e.what();
  }
}

TEST_P(BothKinds, EvalModeDeterministicAndPure) {
  auto net = models::build_network(spec_of(GetParam(), 8, 2), 3);
  Rng rng(2);
  const Tensor x = oracle::random_tensor({2, 1, 32, 32}, rng, 0, 1);
  const auto a = net->forward(x, false);
  const auto b = net->forward(x, false);
  EXPECT_EQ(a.seg.value().storage(), b.seg.value().storage());
  EXPECT_EQ(a.cls.value().storage(), b.cls.value().storage());
  auto twin = net->clone();
  const auto c = twin->forward(x, false);
  EXPECT_EQ(a.seg.value().storage(), c.seg.value().storage());
}

TEST_P(BothKinds, ZeroInputFinite) {
  auto net = models::build_network(spec_of(GetParam(), 8, 2), 3);
  const auto out = net->forward(Tensor({2, 1, 32, 32}, 0.0), true);
  EXPECT_TRUE(out.seg.value().all_finite());
  EXPECT_TRUE(out.cls.value().all_finite());
}

TEST_P(BothKinds, NonFiniteInputNamesLayer) {
  auto net = models::build_network(spec_of(GetParam(), 8, 2), 3);
  Tensor x({1, 1, 32, 32}, 0.0);
  x[17] = INFINITY;
  try {
    net->forward(x, false);
    FAIL();
  } catch (const NonFiniteError& e) {
    EXPECT_NE(std::string(e.what()).find("input"), std::string::npos) << e.what();
  }
}

TEST_P(BothKinds, ParameterGroupsPartition) {
  auto net = models::build_network(spec_of(GetParam(), 16, 2), 1);
  const auto g = models::param_groups(*net);
  std::set<const models::Parameter*> all, seen;
  for (const auto& p : net->parameters()) all.insert(&p);
  for (auto* p : g.backbone) EXPECT_TRUE(seen.insert(p).second);
  for (auto* p : g.heads) EXPECT_TRUE(seen.insert(p).second);
  EXPECT_EQ(seen, all);
  auto in = [](const std::vector<models::Parameter*>& v, const std::string& name) {
    for (auto* p : v) {
      if (p->name == name) return true;
    }
    return false;
  };
  EXPECT_TRUE(in(g.heads, "seg_head.weight"));
  EXPECT_TRUE(in(g.heads, "cls_head.weight"));
  if (GetParam() == BackboneKind::patch_attention) EXPECT_TRUE(in(g.backbone, "patch_embed.weight"));
  else EXPECT_TRUE(in(g.backbone, "enc0.0.conv.weight"));
}

TEST_P(BothKinds, GradientMatchesFiniteDifferences) {
  BackboneSpec spec = spec_of(GetParam(), 8, 2);
  auto net = models::build_network(spec, 9);
  Rng rng(4);
  const Tensor x = oracle::random_tensor({2, 1, 16, 16}, rng, 0, 1);
  const Tensor rs = oracle::random_tensor({2, 15, 16, 16}, rng, -1, 1);
  const Tensor rc = oracle::random_tensor({2, 7}, rng, -1, 1);
  auto loss_of = [&](const losses::DualHeadOutput& out) {
    return ag::add(ag::sum(ag::mul(out.seg, ag::Var(rs))), ag::sum(ag::mul(out.cls, ag::Var(rc))));
  };
  net->zero_grad();
  loss_of(net->forward(x, true)).backward();
  for (auto& p : net->parameters()) {
    const Tensor analytic = p.var.grad();
    Tensor& w = p.var.mutable_value();
    const Tensor numeric = oracle::numeric_gradient(
        [&](const Tensor& t) {
          const Tensor keep = w;
          w = t;
          ag::NoGradGuard g;
          const double v = loss_of(net->forward(x, true)).item();
          w = keep;
          return v;
        },
        w, 1e-6);
    // Attention key biases have an exactly zero gradient (softmax is shift
    // invariant), so near-zero entries are compared in absolute terms.
    EXPECT_LT(oracle::max_relative_error(analytic, numeric, 1e-3), 1e-3) << p.name;
  }
}

INSTANTIATE_TEST_SUITE_P(Models, BothKinds,
                         ::testing::Values(BackboneKind::conv_unet, BackboneKind::patch_attention),
                         [](const auto& info) { return models::to_string(info.param); });

TEST(ConvUNet, ParameterCountMatchesHandCount) {
  // width 16, depth 3, 15 classes, 7 labels. Each conv block is
  // conv3x3 (no bias) + batch-norm scale/shift, twice.
  //   enc0  1->16, 16->16        144+32 + 2304+32     =  2512
  //   enc1 16->32, 32->32       4608+64 + 9216+64     = 13952
  //   enc2 32->64, 64->64     18432+128 + 36864+128   = 55552
  //   dec1 96->32, 32->32     27648+64 + 9216+64      = 36992
  //   dec0 48->16, 16->16      6912+32 + 2304+32      =  9280
  //   seg head 16*15+15 = 255, cls head 64*7+7 = 455
  const std::size_t hand = 2512 + 13952 + 55552 + 36992 + 9280 + 255 + 455;
  EXPECT_EQ(hand, 118998u);
  auto net = models::build_network(spec_of(BackboneKind::conv_unet, 16, 3), 0);
  EXPECT_EQ(net->parameter_count(), hand);
  EXPECT_EQ(models::conv_unet_parameter_count(16, 3, 15, 7), hand);
}

TEST(Heterogeneity, NoSharedBackboneWeightShapes) {
  auto a = models::build_network(spec_of(BackboneKind::conv_unet, 16, 3), 0);
  auto b = models::build_network(spec_of(BackboneKind::patch_attention, 16, 2), 0);
  auto shapes = [](models::Network& n) {
    std::set<Shape> s;
    for (auto* p : models::param_groups(n).backbone) {
      if (p->var.value().rank() >= 2) s.insert(p->var.shape());
    }
    return s;
  };
  const auto sa = shapes(*a), sb = shapes(*b);
  for (const auto& s : sa) EXPECT_EQ(sb.count(s), 0u) << shape_str(s);
}

TEST(Spec, Validation) {
  EXPECT_THROW(spec_of(BackboneKind::conv_unet, 4, 3).validate(), std::invalid_argument);
  EXPECT_THROW(spec_of(BackboneKind::conv_unet, 16, 1).validate(), std::invalid_argument);
  EXPECT_THROW(spec_of(BackboneKind::conv_unet, 16, 6).validate(), std::invalid_argument);
  EXPECT_EQ(spec_of(BackboneKind::conv_unet, 16, 3).downsampling_factor(), 4);
  EXPECT_EQ(spec_of(BackboneKind::patch_attention, 16, 2).downsampling_factor(), 4);
  EXPECT_EQ(models::parse_backbone_kind("patch_attention"), BackboneKind::patch_attention);
  EXPECT_THROW(models::parse_backbone_kind("resnet"), std::invalid_argument);
}

TEST(ImportWeights, MapsExternalNames) {
  const auto dir = std::filesystem::path(FMDACL_TEST_TMP) / "import";
  std::filesystem::create_directories(dir);
  auto net = models::build_network(spec_of(BackboneKind::conv_unet, 8, 2), 0);
  const Shape shape = net->find_parameter("seg_head.weight")->var.shape();
  Archive a;
  Tensor w(shape, 0.125);
  a.arrays.emplace_back("external/seg.w", w);
  a.arrays.emplace_back("external/bn.mean", Tensor({8}, 3.0));
  a.arrays.emplace_back("external/bad", Tensor({2, 2}, 1.0));
  write_archive(dir / "w.arc", a);
  {
    std::ofstream m(dir / "map.txt");
    m << "# external internal\nexternal/seg.w seg_head.weight\n\nexternal/bn.mean enc0.0.bn.running_mean\n";
  }
  EXPECT_EQ(models::import_weights(*net, dir / "w.arc", dir / "map.txt"), 2u);
  EXPECT_EQ(net->find_parameter("seg_head.weight")->var.value().storage(), w.storage());
  {
    std::ofstream m(dir / "bad.txt");
    m << "external/bad seg_head.weight\n";
  }
  EXPECT_THROW(models::import_weights(*net, dir / "w.arc", dir / "bad.txt"), std::runtime_error);
}
