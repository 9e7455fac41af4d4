#include <cmath>
#include <vector>

#include "doctest.h"
#include "fpemb/common.hpp"
#include "fpemb/ops.hpp"
#include "fpemb/optimizer.hpp"
#include "fpemb/rng.hpp"
#include "test_util.hpp"

using namespace fpemb;

namespace {

struct Reference {
  std::vector<double> value, sq;
};

// Independent replay of one update for a single parameter group.
void reference_step(Reference& r, const std::vector<double>& grad, double lr,
                    const RmsPropConfig& c) {
  for (std::size_t j = 0; j < r.value.size(); ++j) {
    double g = grad[j] + c.weight_decay * r.value[j];
    r.sq[j] = c.decay * r.sq[j] + (1.0 - c.decay) * g * g;
    r.value[j] -= lr * g / (std::sqrt(r.sq[j]) + c.epsilon);
  }
}

}  // namespace

TEST_CASE("constructor validates its constants") {
  Var p = ops::parameter(Tensor({2}));
  RmsPropConfig bad;
  bad.lr_features = 0.0;
  CHECK_THROWS_AS(RmsProp({{"p", p, false}}, bad), Error);
  bad = RmsPropConfig{};
  bad.decay = 1.0;
  CHECK_THROWS_AS(RmsProp({{"p", p, false}}, bad), Error);
  bad = RmsPropConfig{};
  bad.weight_decay = -1e-9;
  CHECK_THROWS_AS(RmsProp({{"p", p, false}}, bad), Error);
}

TEST_CASE("update matches a hand-rolled RMSProp with coupled decay") {
  Rng rng(81);
  Tensor init = test::random_tensor({3, 2}, rng, -1.0, 1.0);
  Var p = ops::parameter(init);
  RmsPropConfig config;
  config.lr_features = 0.01;
  config.weight_decay = 0.1;  // large so the coupling is visible
  RmsProp opt({{"p", p, false}}, config);

  Reference ref;
  for (std::int64_t j = 0; j < init.size(); ++j) {
    ref.value.push_back(init[j]);
    ref.sq.push_back(0.0);
  }

  for (int step = 0; step < 20; ++step) {
    Tensor target = test::random_tensor({3, 2}, rng, -1.0, 1.0);
    opt.zero_grad();
    Var diff = ops::sub(p, ops::constant(target));
    backward(ops::sum_all(ops::mul(diff, diff)));

    std::vector<double> grad;
    for (std::int64_t j = 0; j < init.size(); ++j)
      grad.push_back(2.0 * (ref.value[j] - target[j]));
    reference_step(ref, grad, config.lr_features, config);
    opt.step();
    for (std::int64_t j = 0; j < init.size(); ++j) {
      CHECK(p.value()[j] == doctest::Approx(ref.value[j]).epsilon(1e-12));
      CHECK(opt.square_avg()[0][j] ==
            doctest::Approx(ref.sq[j]).epsilon(1e-12));
    }
  }
}

TEST_CASE("alignment-network parameters use the second learning rate") {
  Tensor init({1}, 1.0);
  Var regular = ops::parameter(init);
  Var stn = ops::parameter(init);
  RmsPropConfig config;
  config.lr_features = 0.4;
  config.lr_stn = 0.1;
  config.weight_decay = 0.0;
  RmsProp opt({{"a", regular, false}, {"b", stn, true}}, config);

  opt.zero_grad();
  backward(ops::sum_all(ops::add(regular, stn)));  // both grads exactly 1
  opt.step();

  // First step divides by sqrt(0.01*g^2)+eps, so the move is ~lr*10.
  const double denom = std::sqrt(0.01) + config.epsilon;
  CHECK(regular.value()[0] ==
        doctest::Approx(1.0 - 0.4 / denom).epsilon(1e-12));
  CHECK(stn.value()[0] == doctest::Approx(1.0 - 0.1 / denom).epsilon(1e-12));
}

TEST_CASE("parameters without gradients still receive weight decay") {
  Tensor init({2}, 2.0);
  Var touched = ops::parameter(init);
  Var untouched = ops::parameter(init);
  RmsPropConfig config;
  config.lr_features = 0.01;
  config.weight_decay = 0.5;
  RmsProp opt({{"a", touched, false}, {"b", untouched, false}}, config);

  opt.zero_grad();
  backward(ops::sum_all(touched));
  opt.step();

  // g = 0 + wd*value = 1.0 for the untouched parameter.
  const double g = 0.5 * 2.0;
  const double sq = 0.01 * g * g;
  const double expect = 2.0 - 0.01 * g / (std::sqrt(sq) + config.epsilon);
  CHECK(untouched.value()[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(untouched.value()[1] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(touched.value()[0] != untouched.value()[0]);
}

TEST_CASE("zero_grad clears accumulated gradients between steps") {
  Var p = ops::parameter(Tensor({1}, 1.0));
  RmsPropConfig config;
  config.weight_decay = 0.0;
  RmsProp opt({{"p", p, false}}, config);

  backward(ops::sum_all(p));
  REQUIRE(p.has_grad());
  CHECK(p.grad()[0] == 1.0);
  backward(ops::sum_all(p));
  CHECK(p.grad()[0] == 2.0);  // gradients accumulate without zero_grad
  opt.zero_grad();
  CHECK(!p.has_grad());
}

TEST_CASE("pure weight decay shrinks the parameter norm") {
  Rng rng(91);
  Var p = ops::parameter(test::random_tensor({8}, rng, 0.5, 1.5));
  RmsPropConfig config;
  config.lr_features = 0.001;
  config.weight_decay = 0.1;
  RmsProp opt({{"p", p, false}}, config);

  auto norm = [&] {
    double s = 0.0;
    for (std::int64_t j = 0; j < p.value().size(); ++j)
      s += p.value()[j] * p.value()[j];
    return std::sqrt(s);
  };
  double prev = norm();
  for (int step = 0; step < 10; ++step) {
    opt.zero_grad();
    opt.step();  // no gradients at all: only decay acts
    const double now = norm();
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("state buffers match parameter shapes") {
  Var a = ops::parameter(Tensor({3, 4}));
  Var b = ops::parameter(Tensor({2}));
  RmsProp opt({{"a", a, false}, {"b", b, false}}, RmsPropConfig{});
  REQUIRE(opt.square_avg().size() == 2);
  CHECK(opt.square_avg()[0].same_shape(a.value()));
  CHECK(opt.square_avg()[1].same_shape(b.value()));
}
