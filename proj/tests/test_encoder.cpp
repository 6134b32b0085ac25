#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "grad_fixtures.hpp"
#include "poleimg/adam.hpp"
#include "poleimg/checkpoint.hpp"
#include "poleimg/errors.hpp"
#include "support.hpp"

using namespace poleimg;
using testing::random_images;

TEST_CASE("initialization") {
  const EncoderShape shape;
  const auto a = init_encoder_params<double>(shape, 3);
  const auto b = init_encoder_params<double>(shape, 3);
  CHECK(a == b);
  CHECK_FALSE(a == init_encoder_params<double>(shape, 4));
  REQUIRE(a.size() == kEncoderTensorCount);
  for (std::size_t i = 1; i < a.size(); i += 2) CHECK(a[i].value.isZero(0.0));

  // 16 x (3 x 3 x 1) first-layer weights with std sqrt(2 / 9).
  const auto& w = a[0].value;
  CHECK(w.size() == 144);
  const double mean = w.mean();
  const double sd = std::sqrt((w.array() - mean).square().sum() / (w.size() - 1));
  CHECK(std::abs(sd - std::sqrt(2.0 / 9.0)) < 0.4 * std::sqrt(2.0 / 9.0));

  CHECK(a[0].name == "conv1.weight");
  CHECK(a[0].dims == std::vector<std::uint32_t>{16, 3, 3, 1});
  CHECK(a[8].name == "fc.weight");
  CHECK(a[8].dims == std::vector<std::uint32_t>{128, 128});
  CHECK(a.parameter_count() == 16 * 9 + 16 + 32 * 144 + 32 + 64 * 288 + 64 + 128 * 576 + 128 + 128 * 128 + 128);
}

TEST_CASE("spatial sizes halve with ceiling") {
  const auto dims = encoder_spatial_dims(EncoderShape{});
  CHECK(dims[0] == SpatialDims{80, 360});
  CHECK(dims[1] == SpatialDims{40, 180});
  CHECK(dims[2] == SpatialDims{20, 90});
  CHECK(dims[3] == SpatialDims{10, 45});
  CHECK(dims[4] == SpatialDims{5, 23});
}

TEST_CASE("conv matches a direct loop") {
  Rng rng(1, "conv-direct");
  const SpatialDims dims{5, 6};
  const Matrix<double> x = testing::random_matrix(rng, 2, dims.size());
  const Matrix<double> w = testing::random_matrix(rng, 3, 18);
  const Matrix<double> b = testing::random_matrix(rng, 3, 1);
  const Matrix<double> y = conv_forward(x, dims, w, b);
  const SpatialDims od = dims.halved();
  REQUIRE(y.cols() == od.size());
  for (int o = 0; o < 3; ++o) {
    for (int oh = 0; oh < od.height; ++oh) {
      for (int ow = 0; ow < od.width; ++ow) {
        double acc = b(o, 0);
        for (int kh = 0; kh < 3; ++kh) {
          for (int kw = 0; kw < 3; ++kw) {
            const int ih = 2 * oh + kh - 1, iw = 2 * ow + kw - 1;
            if (ih < 0 || iw < 0 || ih >= dims.height || iw >= dims.width) continue;
            for (int c = 0; c < 2; ++c) acc += w(o, (kh * 3 + kw) * 2 + c) * x(c, ih * dims.width + iw);
          }
        }
        CHECK(y(o, oh * od.width + ow) == doctest::Approx(acc).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("forward produces unit descriptors") {
  const EncoderShape shape{16, 40, 32};
  const auto params = init_encoder_params<double>(shape, 7);
  Rng rng(2, "fwd");
  const auto images = random_images(rng, 5, shape.rows, shape.cols);
  const Matrix<double> d = encoder_forward<double>(params, shape, images);
  REQUIRE(d.rows() == 32);
  REQUIRE(d.cols() == 5);
  for (Eigen::Index i = 0; i < d.cols(); ++i) CHECK(std::abs(d.col(i).norm() - 1.0) <= 1e-6);
}

TEST_CASE("all-zero image with zero biases gives the zero descriptor") {
  const EncoderShape shape{8, 16, 8};
  const auto params = init_encoder_params<double>(shape, 1);
  std::vector<ImageMatrix<double>> images{ImageMatrix<double>::Zero(8, 16)};
  const Matrix<double> d = encoder_forward<double>(params, shape, images);
  CHECK(d.isZero(0.0));
}

TEST_CASE("batches are independent") {
  const EncoderShape shape{16, 40, 16};
  const auto params = testing::encoder_with_biases(shape, 5);
  Rng rng(3, "batch");
  const auto images = random_images(rng, 4, shape.rows, shape.cols);
  const Matrix<double> all = encoder_forward<double>(params, shape, images);
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::vector<ImageMatrix<double>> one{images[i]};
    CHECK(encoder_forward<double>(params, shape, one).col(0) == all.col(static_cast<Eigen::Index>(i)));
  }
  std::vector<ImageMatrix<double>> twins{images[0], images[0]};
  const Matrix<double> t = encoder_forward<double>(params, shape, twins);
  CHECK(t.col(0) == t.col(1));
}

TEST_CASE("wrong image shape is rejected") {
  const EncoderShape shape{16, 40, 16};
  const auto params = init_encoder_params<double>(shape, 5);
  std::vector<ImageMatrix<double>> bad{ImageMatrix<double>::Zero(16, 41)};
  CHECK_THROWS_AS(encoder_forward<double>(params, shape, bad), ShapeError);
}

TEST_CASE("backward contracts") {
  const EncoderShape shape{16, 40, 16};
  const auto params = testing::encoder_with_biases(shape, 5);
  Rng rng(4, "bwd");
  const auto images = random_images(rng, 3, shape.rows, shape.cols);
  EncoderCache<double> cache;
  encoder_forward<double>(params, shape, images, &cache);

  const auto zero = encoder_backward(params, cache, Matrix<double>(Matrix<double>::Zero(16, 3)));
  for (std::size_t i = 0; i < zero.size(); ++i) CHECK(zero[i].value.isZero(0.0));

  const Matrix<double> g = testing::random_matrix(rng, 16, 3);
  CHECK(encoder_backward(params, cache, g) == encoder_backward(params, cache, g));

  CHECK_THROWS_AS(encoder_backward(params, cache, Matrix<double>(Matrix<double>::Zero(16, 2))), ContractError);
  const auto other = init_encoder_params<double>(EncoderShape{16, 40, 8}, 5);
  CHECK_THROWS_AS(encoder_backward(other, cache, Matrix<double>(Matrix<double>::Zero(8, 3))), ContractError);
}

TEST_CASE("normalization Jacobian at (3, 4)") {
  // Pre-norm x = (3, 4), y = (0.6, 0.8), g = (1, 0):
  // (I - y y^T) g / |x| = (1 - 0.36, -0.48) / 5.
  Vector<double> x(2), g(2);
  x << 3, 4;
  g << 1, 0;
  const Vector<double> d = l2_normalize_backward(x, g);
  CHECK(d(0) == doctest::Approx(0.64 / 5.0).epsilon(1e-15));
  CHECK(d(1) == doctest::Approx(-0.48 / 5.0).epsilon(1e-15));
  CHECK(l2_normalize(Vector<double>::Zero(3).eval()).isZero(0.0));
}

TEST_CASE("layer and end-to-end gradients match finite differences") {
  for (const auto& c : testing::all_grad_checks(50, 11)) {
    INFO(c.name << " worst " << c.report.worst_tensor << "[" << c.report.worst_index << "]");
    CHECK(c.report.samples == 50);
    CHECK(c.report.max_relative_error < 1e-4);
  }
  CHECK(testing::check_nt_xent(50, 3).report.max_relative_error < 1e-6);
  CHECK(testing::check_sl_bce(50, 3, 1).report.max_relative_error < 1e-6);
  CHECK(testing::check_sl_bce(50, 3, 0).report.max_relative_error < 1e-6);
}

TEST_CASE("grad_check on a quadratic") {
  ParameterSet<double> p;
  Rng rng(5, "quad");
  p.tensors.push_back(testing::tensor_from("p", testing::random_matrix(rng, 4, 3)));
  LossFunction<double> f = [](const ParameterSet<double>& q, ParameterSet<double>* g) {
    if (g) g->tensors[0].value = q[0].value;
    return 0.5 * q[0].value.squaredNorm();
  };
  CHECK(grad_check(p, f, 30, 1e-4, 1).max_relative_error < 1e-8);
  CHECK_THROWS_AS(grad_check(p, f, 30, 0.0, 1), std::invalid_argument);

  // A wrong gradient is caught.
  LossFunction<double> wrong = [](const ParameterSet<double>& q, ParameterSet<double>* g) {
    if (g) g->tensors[0].value = 2.0 * q[0].value;
    return 0.5 * q[0].value.squaredNorm();
  };
  CHECK(grad_check(p, wrong, 30, 1e-4, 1).max_relative_error > 0.4);
}

TEST_CASE("grad_check redraws probes that cross a kink") {
  ParameterSet<double> p;
  p.tensors.push_back(testing::tensor_from("p", Matrix<double>::Constant(1, 4, 2e-5)));
  p[0].value(0, 1) = -1.0;
  // sum |p|: entries 0, 2 and 3 sit within one step of the kink at zero.
  LossFunction<double> f = [](const ParameterSet<double>& q, ParameterSet<double>* g) {
    if (g) g->tensors[0].value = q[0].value.array().sign().matrix();
    return q[0].value.cwiseAbs().sum();
  };
  CHECK(grad_check(p, f, 20, 1e-4, 2).max_relative_error > 0.5);
  RegionKey<double> sign_pattern = [](const ParameterSet<double>& q) {
    std::uint64_t key = 0;
    for (Eigen::Index k = 0; k < q[0].value.size(); ++k) key = 2 * key + (q[0].value.data()[k] > 0 ? 1 : 0);
    return key;
  };
  const auto r = grad_check(p, f, 20, 1e-4, 2, sign_pattern);
  CHECK(r.samples == 20);
  CHECK(r.rejected > 0);
  CHECK(r.max_relative_error < 1e-8);
}

TEST_CASE("adam first step") {
  ParameterSet<double> p;
  p.tensors.push_back(make_tensor<double>("w", {1}));
  auto g = p.zeros_like();
  g[0].value(0, 0) = 0.5;
  auto state = adam_init(p, 1e-3);
  adam_step(state, p, g);
  // m = 0.05, v = 2.5e-4, bias-corrected 0.5 and 0.25: -1e-3 * 0.5 / (0.5 + 1e-8).
  CHECK(p[0].value(0, 0) == doctest::Approx(-1e-3 * 0.5 / (0.5 + 1e-8)).epsilon(1e-12));
  CHECK(std::abs(p[0].value(0, 0) + 1e-3) < 1e-6);
  CHECK(state.step == 1);
}

TEST_CASE("adam zero gradient and determinism") {
  ParameterSet<double> p;
  p.tensors.push_back(make_tensor<double>("w", {2, 2}));
  p[0].value << 1, 2, 3, 4;
  const auto before = p;
  auto state = adam_init(p, 1e-3);
  adam_step(state, p, p.zeros_like());
  CHECK(p == before);

  Rng rng(6, "adam");
  auto g = p.zeros_like();
  g[0].value = testing::random_matrix(rng, 2, 2);
  auto p1 = before, p2 = before;
  auto s1 = adam_init(p1, 1e-3), s2 = adam_init(p2, 1e-3);
  for (int i = 0; i < 5; ++i) {
    adam_step(s1, p1, g);
    adam_step(s2, p2, g);
  }
  CHECK(p1 == p2);
  CHECK(s1.first_moment == s2.first_moment);
}

TEST_CASE("adam rejects non-finite gradients naming the tensor") {
  ParameterSet<double> p;
  p.tensors.push_back(make_tensor<double>("layer.w", {3}));
  auto g = p.zeros_like();
  g[0].value(1, 0) = std::nan("");
  auto state = adam_init(p, 1e-3);
  try {
    adam_step(state, p, g);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("layer.w") != std::string::npos);
  }
}

TEST_CASE("checkpoint round-trip") {
  testing::TempDir dir("ckpt");
  Checkpoint c;
  c.shape = EncoderShape{16, 40, 32};
  c.params = testing::encoder_with_biases(c.shape, 9);
  write_checkpoint(c, dir / "a.ckpt");
  const Checkpoint back = read_checkpoint(dir / "a.ckpt");
  CHECK(back.params == c.params);
  CHECK(back.shape.emb_dim == 32);
  CHECK(back.shape.rows == 16);
  CHECK_FALSE(back.optimizer.has_value());

  c.optimizer = adam_init(c.params, 1e-3);
  auto g = c.params.zeros_like();
  g[3].value.setConstant(0.25);
  adam_step(*c.optimizer, c.params, g);
  write_checkpoint(c, dir / "b.ckpt");
  const Checkpoint withopt = read_checkpoint(dir / "b.ckpt");
  REQUIRE(withopt.optimizer.has_value());
  CHECK(withopt.optimizer->step == 1);
  CHECK(withopt.optimizer->second_moment == c.optimizer->second_moment);
  CHECK(testing::slurp(dir / "b.ckpt").substr(0, 4) == "PICK");

  const std::string bytes = testing::slurp(dir / "a.ckpt");
  testing::spit(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_checkpoint(dir / "trunc.ckpt"), FormatError);
  testing::spit(dir / "magic.ckpt", "XXXX" + bytes.substr(4));
  CHECK_THROWS_AS(read_checkpoint(dir / "magic.ckpt"), FormatError);
}
