#include <align_teleop/alignment.hpp>
#include <align_teleop/controller.hpp>
#include <align_teleop/datagen.hpp>
#include <align_teleop/kinematics.hpp>
#include <align_teleop/random.hpp>

#include <benchmark/benchmark.h>

using namespace align_teleop;

namespace {

// Untrained autoencoder-shaped controller: same cost profile as a trained one.
const LatentController& bench_controller() {
  static const LatentController ctrl = [] {
    const TaskSpec spec = default_task(Task::Plane);
    auto rng = make_rng(0, "bench-demos");
    const auto pairs = demo_pairs(generate_demonstrations(spec, 20, rng), 200);
    CaeConfig cc;
    cc.epochs = 1;
    auto crng = make_rng(0, "bench-cae");
    return train_cae(spec, pairs, cc, crng).controller;
  }();
  return ctrl;
}

void BM_ForwardKinematics(benchmark::State& state) {
  const TaskSpec spec = default_task(static_cast<Task>(state.range(0)));
  auto rng = make_rng(0, "bench-fk");
  const JointState s = sample_valid_state(spec, rng);
  for (auto _ : state) benchmark::DoNotOptimize(forward_kinematics(spec.arm, s));
}
BENCHMARK(BM_ForwardKinematics)->Arg(static_cast<int>(Task::Plane))->Arg(static_cast<int>(Task::ReachPour));

void BM_TapeMlpForwardBackward(benchmark::State& state) {
  const auto hidden = static_cast<std::size_t>(state.range(0));
  auto rng = make_rng(0, "bench-mlp");
  const AlignmentNet f = AlignmentNet::xavier(default_task(Task::Plane), hidden, rng);
  const std::vector<double> x(f.net.input_size(), 0.3);
  for (auto _ : state) {
    ad::Tape t;
    const auto p = t.register_parameters(f.net.parameters());
    const auto y = f.net.forward(t, t.constants(x), p);
    benchmark::DoNotOptimize(t.backward(y[0] + y[1]));
  }
}
BENCHMARK(BM_TapeMlpForwardBackward)->Arg(16)->Arg(64);

void BM_TThetaDouble(benchmark::State& state) {
  const auto& ctrl = bench_controller();
  auto rng = make_rng(0, "bench-ttheta");
  const AlignmentNet f = AlignmentNet::xavier(ctrl.task(), 64, rng);
  const JointState s = sample_valid_state(ctrl.task(), rng);
  for (auto _ : state) benchmark::DoNotOptimize(t_theta(f, ctrl, Input{0.3, -0.2}, s));
}
BENCHMARK(BM_TThetaDouble);

void BM_TotalLossEpoch(benchmark::State& state) {
  const auto& ctrl = bench_controller();
  const Dataset d = build_dataset(ctrl, 1000, 10, 0.0, 0);
  auto rng = make_rng(0, "bench-epoch");
  const AlignmentNet f = AlignmentNet::xavier(ctrl.task(), 64, rng);
  AlignTrainConfig cfg;
  const auto nn = nearest_neighbors(ctrl.task(), d.unlabeled, cfg.neighbors);
  const LossWeights w = state.range(0) ? LossWeights::all_priors(0.0) : LossWeights::no_priors(0.0);
  for (auto _ : state) {
    const auto draws = draw_priors(d.unlabeled, nn, cfg, rng);
    ad::Tape t;
    const AlignmentScene scene{f, ctrl, t.register_parameters(f.net.parameters())};
    const auto loss = total_loss(t, scene, d.labeled, d.unlabeled, draws, w);
    benchmark::DoNotOptimize(t.backward(loss.total));
  }
}
BENCHMARK(BM_TotalLossEpoch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
