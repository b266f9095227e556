#include <benchmark/benchmark.h>

#include "abd/align.hpp"
#include "abd/data.hpp"
#include "abd/diffusion.hpp"
#include "abd/energy.hpp"
#include "abd/geom.hpp"

using namespace abd;

namespace {

struct Setup {
  ComplexInstance complex;
  Design reference;
  DiffusionModel model;

  Setup() {
    GenParams gp;
    gp.seed = 1;
    complex = gen_complex(gp);
    reference = gen_reference_cdr(complex, 1);
    Rng init(2);
    model = DiffusionModel{DenoiserParams::init(DenoiserConfig{}, init), NoiseSchedule::cosine()};
  }
};

const Setup& setup() {
  static const Setup s;
  return s;
}

void BM_ExpLog(benchmark::State& state) {
  Rng r(1);
  const AxisAngle v{Vec3(r.normal(), r.normal(), r.normal())};
  for (auto _ : state) benchmark::DoNotOptimize(log_map(exp_map(v)));
}
BENCHMARK(BM_ExpLog);

void BM_Igso3Sample(benchmark::State& state) {
  Rng r(1);
  const Rotation mean;
  for (auto _ : state) benchmark::DoNotOptimize(sample_igso3_approx(mean, 0.3, r));
}
BENCHMARK(BM_Igso3Sample);

void BM_Energies(benchmark::State& state) {
  const Setup& s = setup();
  for (auto _ : state) benchmark::DoNotOptimize(cdr_ag_energies(s.complex, s.reference.cdr));
}
BENCHMARK(BM_Energies);

void BM_Denoise(benchmark::State& state) {
  const Setup& s = setup();
  Rng r(3);
  const NoisyCdr noisy = noise_cdr(s.complex, s.reference.cdr, 50, s.model.schedule,
                                   s.model.params.config.length_scale, r);
  for (auto _ : state)
    benchmark::DoNotOptimize(
        denoise(s.model.params, diffusion_features(s.model, s.complex, noisy.cdr, noisy.t), noisy.cdr));
}
BENCHMARK(BM_Denoise);

void BM_LossAndGrad(benchmark::State& state) {
  const Setup& s = setup();
  std::uint64_t k = 0;
  for (auto _ : state) {
    const auto res = loss_and_grad(s.model.params, [&](ad::Tape& tape) {
      Rng noise(++k);
      const LossVars v = diffusion_losses_on_tape(tape, s.model, s.complex, s.reference.cdr, 1 + k % 100, noise);
      return tape.add(tape.add(v.type, v.pos), v.rot);
    });
    benchmark::DoNotOptimize(res.first);
  }
}
BENCHMARK(BM_LossAndGrad);

void BM_SampleCdr(benchmark::State& state) {
  const Setup& s = setup();
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(sample_cdr(s.model, s.complex, 1.0, ++seed));
}
BENCHMARK(BM_SampleCdr)->Unit(benchmark::kMillisecond);

void BM_PoeaLoss(benchmark::State& state) {
  const Setup& s = setup();
  PreferenceRecord rec;
  rec.complex_id = s.complex.id;
  rec.y_w = s.reference;
  rec.y_l = sample_cdr(s.model, s.complex, 1.0, 9);
  rec.margin = 0.3;
  Rng r(4);
  for (auto _ : state) benchmark::DoNotOptimize(poea_loss(s.model, s.model, rec, s.complex, 40, r, 100.0));
}
BENCHMARK(BM_PoeaLoss);

}  // namespace

BENCHMARK_MAIN();
