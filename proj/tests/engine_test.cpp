#include "nero/engine.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "nero/genome.hpp"
#include "test_util.hpp"

using namespace nero;

namespace {

// dense-only classifier over flat inputs: n_in -> hidden -> n_classes
NetworkPlan dense_plan(int hidden, const std::string& act = "swish") {
  NetworkPlan plan;
  plan.input_shape = {1, 1, 2};
  LayerDescriptor fc;
  fc.kind = LayerKind::Fc;
  fc.attrs = {{"layer", std::string("fc")},
              {"act", act},
              {"num-units", std::vector<double>{static_cast<double>(hidden)}},
              {"bias", std::string("True")}};
  fc.inputs = {-1};
  LayerDescriptor sm;
  sm.kind = LayerKind::Softmax;
  sm.attrs = {{"layer", std::string("fc")},
              {"act", std::string("softmax")},
              {"num-units", std::string("10")},
              {"bias", std::string("True")}};
  sm.inputs = {0};
  plan.descriptors = {fc, sm};
  return plan;
}

// 2-class XOR-style dataset embedded in 1x1x2 images
Dataset xor_dataset(int n, std::uint64_t seed) {
  Dataset ds;
  ds.n_classes = 2;
  ds.images = Tensor({n, 1, 1, 2});
  ds.labels.resize(static_cast<size_t>(n));
  Rng rng(seed);
  for (int i = 0; i < n; ++i) {
    const int a = rng.bernoulli(0.5) ? 1 : 0;
    const int b = rng.bernoulli(0.5) ? 1 : 0;
    ds.images[nhwc_index(ds.images, i, 0, 0, 0)] =
        static_cast<float>(a) * 0.8f + 0.1f + static_cast<float>(rng.uniform_real(-0.05, 0.05));
    ds.images[nhwc_index(ds.images, i, 0, 0, 1)] =
        static_cast<float>(b) * 0.8f + 0.1f + static_cast<float>(rng.uniform_real(-0.05, 0.05));
    ds.labels[static_cast<size_t>(i)] = a ^ b;
  }
  return ds;
}

OptimizerConfig adam_config(double lr = 0.01) {
  OptimizerConfig oc;
  oc.kind = OptKind::Adam;
  oc.lr = lr;
  oc.decay = 0.0;
  oc.beta1 = 0.9;
  oc.beta2 = 0.999;
  return oc;
}

}  // namespace

TEST(Forward, IdentityConvPassesThrough) {
  NetworkPlan plan;
  plan.input_shape = {4, 4, 3};
  LayerDescriptor conv;
  conv.kind = LayerKind::ConvBlock;
  conv.attrs = {{"layer", std::string("convblock")},
                {"act-pos", std::string("postconv")},
                {"act", std::string("linear")},
                {"bn", std::string("none")},
                {"num-filters", std::vector<double>{3}},
                {"filter-shape", std::string("1")},
                {"stride", std::string("1")},
                {"padding", std::string("valid")},
                {"bias", std::string("False")}};
  conv.inputs = {-1};
  LayerDescriptor sm;
  sm.kind = LayerKind::Softmax;
  sm.attrs = {{"layer", std::string("fc")},
              {"act", std::string("softmax")},
              {"num-units", std::string("10")},
              {"bias", std::string("True")}};
  sm.inputs = {0};
  plan.descriptors = {conv, sm};
  Rng rng(1);
  Network net = build_network(plan, 3, rng);

  // set the 1x1 kernel to identity
  auto* kernel = net.nodes[0].layers[0]->params()[0];
  kernel->zero();
  for (int c = 0; c < 3; ++c) (*kernel)[c * 3 + c] = 1.0f;

  Tensor x({2, 4, 4, 3});
  Rng draw(2);
  for (auto& v : x.v) v = static_cast<float>(draw.uniform_real(0.0, 1.0));
  net.forward(x, Mode::Infer);
  const Tensor& node_out = net.nodes[0].out;
  ASSERT_EQ(node_out.shape, x.shape);
  for (std::int64_t i = 0; i < x.size(); ++i) EXPECT_FLOAT_EQ(node_out[i], x[i]);
}

TEST(Forward, SoftmaxRowsSumToOne) {
  Tensor logits({4, 10});
  Rng rng(3);
  for (auto& v : logits.v) v = static_cast<float>(rng.uniform_real(-5.0, 5.0));
  const Tensor probs = softmax_rows(logits);
  for (int b = 0; b < 4; ++b) {
    double sum = 0.0;
    for (int k = 0; k < 10; ++k) sum += probs[b * 10 + k];
    EXPECT_NEAR(sum, 1.0, 1e-6);
  }
}

TEST(Forward, ZeroWeightDenseEqualsBias) {
  NetworkPlan plan = dense_plan(4, "linear");
  Rng rng(4);
  Network net = build_network(plan, 3, rng);
  for (auto* k : net.kernels()) k->zero();
  // set softmax-unit dense bias
  auto params = net.parameters();
  Tensor* last_bias = params.back();
  for (int i = 0; i < 3; ++i) (*last_bias)[i] = static_cast<float>(i) * 0.5f;
  Tensor x({2, 1, 1, 2}, 0.7f);
  const Tensor logits = net.forward(x, Mode::Infer);
  for (int b = 0; b < 2; ++b)
    for (int k = 0; k < 3; ++k)
      EXPECT_FLOAT_EQ(logits[b * 3 + k], static_cast<float>(k) * 0.5f);
}

TEST(LossCe, AnalyticValues) {
  {
    Tensor logits({1, 10}, 0.0f);  // uniform
    EXPECT_NEAR(loss_ce(logits, {3}), std::log(10.0), 1e-6);
  }
  {
    Tensor logits({1, 3});
    logits.v = {1.0f, 0.0f, 0.0f};
    // -ln(e / (e + 2))
    EXPECT_NEAR(loss_ce(logits, {0}), 0.5514, 5e-4);
  }
  {
    Tensor logits({1, 4}, 0.0f);
    logits[2] = 50.0f;  // near one-hot
    EXPECT_LT(loss_ce(logits, {2}), 1e-6);
  }
}

TEST(Schedules, InverseTimeDecay) {
  OptimizerConfig oc;
  oc.lr = 0.1;
  oc.decay = 0.01;
  EXPECT_DOUBLE_EQ(lr_at(oc, 0), 0.1);
  EXPECT_DOUBLE_EQ(lr_at(oc, 100), 0.05);
}

TEST(Schedules, StepDecayAndCosine) {
  OptimizerConfig oc;
  oc.lr = 0.1;
  oc.schedule = LrSchedule::StepDecay;
  oc.step_factor = 0.1;
  oc.step_boundaries = {100, 150};
  EXPECT_DOUBLE_EQ(lr_at(oc, 99), 0.1);
  EXPECT_NEAR(lr_at(oc, 100), 0.01, 1e-12);
  EXPECT_NEAR(lr_at(oc, 200), 0.001, 1e-12);

  oc.schedule = LrSchedule::Cosine;
  oc.cosine_total_steps = 100;
  EXPECT_DOUBLE_EQ(lr_at(oc, 0), 0.1);
  EXPECT_NEAR(lr_at(oc, 50), 0.05, 1e-9);
  EXPECT_NEAR(lr_at(oc, 100), 0.0, 1e-9);
}

TEST(Optimizers, ConvergeOnQuadratic) {
  // minimize (x - 3)^2 with each optimizer family
  const auto run = [](OptimizerConfig oc) {
    Tensor x({1}, 0.0f);
    Tensor g({1}, 0.0f);
    Optimizer opt(oc, {&x});
    for (int step = 0; step < 2000; ++step) {
      g[0] = 2.0f * (x[0] - 3.0f);
      opt.step({&g});
    }
    return static_cast<double>(x[0]);
  };
  OptimizerConfig sgd;
  sgd.kind = OptKind::GradientDescent;
  sgd.lr = 0.1;
  EXPECT_NEAR(run(sgd), 3.0, 1e-4);
  sgd.momentum = 0.9;
  EXPECT_NEAR(run(sgd), 3.0, 1e-4);
  sgd.nesterov = true;
  EXPECT_NEAR(run(sgd), 3.0, 1e-4);
  EXPECT_NEAR(run(adam_config(0.1)), 3.0, 1e-4);
  OptimizerConfig rms;
  rms.kind = OptKind::RmsProp;
  rms.lr = 0.05;
  rms.rho = 0.9;
  EXPECT_NEAR(run(rms), 3.0, 1e-3);
}

TEST(Train, LossDecreasesOnToyTask) {
  const Dataset train_set = xor_dataset(128, 1);
  const Dataset control_set = xor_dataset(64, 2);
  Rng rng(5);
  Network net = build_network(dense_plan(16), 2, rng);
  TrainConfig tc;
  tc.batch_size = 32;
  tc.budget = 200;
  tc.epochs_cap = 50;
  tc.early_stop_patience = 50;
  tc.l2_coeff = 0.0;
  tc.rng_seed = 7;
  const TrainReport report = train(net, train_set, control_set, tc, adam_config(0.02));
  ASSERT_GE(report.train_loss.size(), 5u);
  EXPECT_LT(report.train_loss[4], report.train_loss[0]);
  EXPECT_FALSE(report.nonfinite_seen);
}

TEST(Train, ZeroBudgetStopsImmediately) {
  const Dataset train_set = xor_dataset(32, 1);
  const Dataset control_set = xor_dataset(16, 2);
  Rng rng(6);
  Network net = build_network(dense_plan(4), 2, rng);
  TrainConfig tc;
  tc.budget = 0;
  const TrainReport report = train(net, train_set, control_set, tc, adam_config());
  EXPECT_EQ(report.stop_reason, StopReason::Budget);
  EXPECT_EQ(report.epochs_run, 0);
  EXPECT_EQ(report.budget_consumed, 0);
}

TEST(Train, BudgetAccounting) {
  const Dataset train_set = xor_dataset(64, 1);
  const Dataset control_set = xor_dataset(16, 2);
  Rng rng(7);
  Network net = build_network(dense_plan(4), 2, rng);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.budget = 10;  // 4 steps per epoch: stops inside epoch 3
  tc.epochs_cap = 100;
  tc.early_stop_patience = 100;
  const TrainReport report = train(net, train_set, control_set, tc, adam_config());
  EXPECT_EQ(report.stop_reason, StopReason::Budget);
  EXPECT_EQ(report.budget_consumed, 10);
  EXPECT_EQ(report.epochs_run, 3);
}

TEST(Train, DeterministicGivenSeed) {
  const Dataset train_set = xor_dataset(64, 3);
  const Dataset control_set = xor_dataset(32, 4);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.budget = 60;
  tc.epochs_cap = 20;
  tc.augment = true;  // exercises the augmentation draw path too
  tc.rng_seed = 99;

  auto run_once = [&]() {
    Rng rng(8);
    Network net = build_network(dense_plan(8), 2, rng);
    const TrainReport report = train(net, train_set, control_set, tc, adam_config());
    return std::make_pair(report, net.save_weights());
  };
  const auto [r1, w1] = run_once();
  const auto [r2, w2] = run_once();
  EXPECT_EQ(r1.train_loss, r2.train_loss);
  EXPECT_EQ(r1.control_loss, r2.control_loss);
  EXPECT_EQ(r1.epochs_run, r2.epochs_run);
  EXPECT_EQ(w1, w2);
}

TEST(Train, EarlyStopOnFlatControl) {
  const Dataset train_set = xor_dataset(64, 5);
  const Dataset control_set = xor_dataset(32, 6);
  Rng rng(9);
  Network net = build_network(dense_plan(4), 2, rng);
  TrainConfig tc;
  tc.batch_size = 64;
  tc.budget = 100000;
  tc.epochs_cap = 100;
  tc.early_stop_patience = 5;
  OptimizerConfig oc = adam_config(1e-12);  // effectively frozen parameters
  const TrainReport report = train(net, train_set, control_set, tc, oc);
  EXPECT_EQ(report.stop_reason, StopReason::EarlyStop);
  EXPECT_EQ(report.epochs_run, 6);  // first epoch sets the best, then patience runs out
}

TEST(Train, NonFiniteLossReported) {
  const Dataset train_set = xor_dataset(64, 7);
  const Dataset control_set = xor_dataset(32, 8);
  Rng rng(10);
  Network net = build_network(dense_plan(16), 2, rng);
  TrainConfig tc;
  tc.batch_size = 32;
  tc.budget = 2000;
  tc.epochs_cap = 50;
  OptimizerConfig oc;
  oc.kind = OptKind::GradientDescent;
  oc.lr = 1e30;  // drives the second dense product past float range
  const TrainReport report = train(net, train_set, control_set, tc, oc);
  EXPECT_TRUE(report.nonfinite_seen);
  EXPECT_EQ(report.stop_reason, StopReason::NonFinite);
  ASSERT_FALSE(report.train_loss.empty());
  EXPECT_FALSE(std::isfinite(report.train_loss.back()));
}

TEST(Train, L2TouchesOnlyKernels) {
  Rng rng(11);
  Network net = build_network(dense_plan(8), 2, rng);
  // nonzero biases must not change the penalty
  const double base = kernel_l2_penalty(net);
  auto params = net.parameters();
  auto kernels = net.kernels();
  for (auto* p : params) {
    const bool is_kernel = std::find(kernels.begin(), kernels.end(), p) != kernels.end();
    if (!is_kernel)
      for (auto& v : p->v) v = 5.0f;
  }
  EXPECT_DOUBLE_EQ(kernel_l2_penalty(net), base);

  // gradient contribution: only kernel grads move, by 2*coeff*k
  net.zero_grads();
  add_l2_gradients(net, 0.01);
  auto grads = net.gradients();
  for (size_t i = 0; i < params.size(); ++i) {
    const bool is_kernel = std::find(kernels.begin(), kernels.end(), params[i]) != kernels.end();
    for (std::int64_t j = 0; j < grads[i]->size(); ++j) {
      if (is_kernel)
        EXPECT_FLOAT_EQ((*grads[i])[j], 0.02f * (*params[i])[j]);
      else
        EXPECT_FLOAT_EQ((*grads[i])[j], 0.0f);
    }
  }
}

TEST(Train, GradientClippingBoundsGlobalNorm) {
  Rng rng(12);
  Network net = build_network(dense_plan(8), 2, rng);
  auto grads = net.gradients();
  Rng draw(13);
  for (auto* g : grads)
    for (auto& v : g->v) v = static_cast<float>(draw.uniform_real(-3.0, 3.0));
  clip_gradients(grads, 5.0);
  double sq = 0.0;
  for (auto* g : grads)
    for (auto v : g->v) sq += static_cast<double>(v) * v;
  EXPECT_LE(std::sqrt(sq), 5.0 + 1e-6);
}

TEST(Evaluate, PerfectAndConstantPredictors) {
  Dataset ds = xor_dataset(40, 14);
  Rng rng(15);
  Network net = build_network(dense_plan(8), 2, rng);

  // constant predictor: zero weights, bias favoring class 1
  for (auto* k : net.kernels()) k->zero();
  auto params = net.parameters();
  (*params.back())[0] = 0.0f;
  (*params.back())[1] = 10.0f;
  const EvalResult res = evaluate(net, ds, 16);
  EXPECT_EQ(res.histogram[1], ds.size());
  EXPECT_EQ(res.histogram[0], 0);

  // perfect memorizer: evaluate against its own argmax labels
  Rng rng2(16);
  Network net2 = build_network(dense_plan(8), 2, rng2);
  Dataset relabeled = ds;
  const EvalResult pre = evaluate(net2, ds, 16);
  const Tensor logits = net2.forward(ds.images, Mode::Infer);
  for (int i = 0; i < ds.size(); ++i)
    relabeled.labels[static_cast<size_t>(i)] =
        logits[i * 2] > logits[i * 2 + 1] ? 0 : 1;
  const EvalResult post = evaluate(net2, relabeled, 16);
  EXPECT_DOUBLE_EQ(post.accuracy, 1.0);
  for (auto m : post.mask) EXPECT_EQ(m, 1);
  (void)pre;
}

TEST(Evaluate, BnInferenceReproducible) {
  const Grammar g = Grammar::parse_file(asset_path("desk.grammar"));
  Rng rng(17);
  const Genome seed = seed_genome(g, rng, SeedVariant::Desk, 300);
  const NetworkPlan plan = decode_genome(seed, g, {8, 8, 3});
  Rng build_rng(18);
  Network net = build_network(plan, 3, build_rng);
  Tensor x({4, 8, 8, 3});
  Rng draw(19);
  for (auto& v : x.v) v = static_cast<float>(draw.uniform_real(0.0, 1.0));
  const Tensor a = net.forward(x, Mode::Infer);
  const Tensor b = net.forward(x, Mode::Infer);
  EXPECT_EQ(a.v, b.v);
}

TEST(AdversarialTrain, ZeroStepsMatchesStandardBitwise) {
  const Dataset train_set = xor_dataset(64, 20);
  const Dataset control_set = xor_dataset(32, 21);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.budget = 40;
  tc.epochs_cap = 10;
  tc.rng_seed = 5;

  Rng r1(22), r2(22);
  Network a = build_network(dense_plan(8), 2, r1);
  Network b = build_network(dense_plan(8), 2, r2);

  const TrainReport ra = train(a, train_set, control_set, tc, adam_config());
  AttackConfig adv;
  adv.kind = AttackKind::Pgd;
  adv.steps = 0;
  ThreatModel tm;
  const TrainReport rb = adversarial_train(b, train_set, control_set, tc, adam_config(), adv, tm);
  EXPECT_EQ(ra.train_loss, rb.train_loss);
  EXPECT_EQ(a.save_weights(), b.save_weights());
}

TEST(Checkpoint, RoundTrip) {
  const Dataset train_set = xor_dataset(64, 23);
  const Dataset control_set = xor_dataset(32, 24);
  NetworkPlan plan = dense_plan(8);
  Rng rng(25);
  Network net = build_network(plan, 2, rng);
  TrainConfig tc;
  tc.batch_size = 16;
  tc.budget = 30;
  tc.epochs_cap = 10;
  Optimizer opt(adam_config(), net.parameters());
  const TrainReport report = train(net, train_set, control_set, tc, adam_config());

  const std::string path = std::filesystem::temp_directory_path() / "nero_ck_test.bin";
  save_checkpoint(path, plan, net, 2, &opt, report);
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.n_classes, 2);
  EXPECT_EQ(ck.weights, net.save_weights());
  EXPECT_EQ(ck.report.train_loss, report.train_loss);
  EXPECT_EQ(ck.report.epochs_run, report.epochs_run);
  EXPECT_EQ(ck.report.stop_reason, report.stop_reason);
  EXPECT_EQ(plan_hash(ck.plan), plan_hash(plan));

  Network restored = restore_network(ck);
  Tensor x({3, 1, 1, 2}, 0.4f);
  const Tensor la = net.forward(x, Mode::Infer);
  const Tensor lb = restored.forward(x, Mode::Infer);
  EXPECT_EQ(la.v, lb.v);
  std::remove(path.c_str());
}

TEST(Checkpoint, RejectsCorruptFile) {
  const std::string path = std::filesystem::temp_directory_path() / "nero_ck_bad.bin";
  {
    std::ofstream f(path, std::ios::binary);
    f << "not a checkpoint";
  }
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST(TrainConfigFromAttrs, MapsLearningUnit) {
  const Grammar g = Grammar::parse_file(asset_path("neronet.grammar"));
  Rng rng(26);
  const InnerGenotype gt = derive(g, "learning", rng);
  const AttributeList attrs = decode(g, gt);
  const TrainConfig tc = train_config_from_attrs(attrs, 1234);
  EXPECT_EQ(tc.budget, 1234);
  EXPECT_GE(tc.early_stop_patience, 5);
  EXPECT_LE(tc.early_stop_patience, 20);
  // batch size realized from the power-of-two exponent
  EXPECT_GE(tc.batch_size, 32);
  EXPECT_LE(tc.batch_size, 512);
  EXPECT_EQ(tc.epochs_cap, 10000);

  const OptimizerConfig oc = optimizer_from_attrs(attrs);
  EXPECT_GT(oc.lr, 0.0);
  EXPECT_GE(oc.decay, 0.0);
}
