#include "hubsim/training.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "hubsim/errors.hpp"

namespace hubsim {

template <typename T>
BasicTensor<T> flow_interpolant(const BasicTensor<T>& z0, const BasicTensor<T>& eps, double sigma) {
  if (z0.shape() != eps.shape()) {
    throw ShapeError("flow_interpolant: " + shape_to_string(z0.shape()) + " vs " +
                     shape_to_string(eps.shape()));
  }
  if (!(sigma >= 0.0 && sigma <= 1.0)) {
    throw std::invalid_argument("flow_interpolant: sigma " + std::to_string(sigma) +
                                " outside [0, 1]");
  }
  BasicTensor<T> out(z0.shape());
  const T s = static_cast<T>(sigma);
  const T c = static_cast<T>(1.0 - sigma);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * z0[i] + s * eps[i];
  return out;
}

template <typename T>
BasicTensor<T> flow_interpolant_blocks(const BasicTensor<T>& z0, const BasicTensor<T>& eps,
                                       const std::vector<double>& sigmas, std::size_t n) {
  if (z0.shape() != eps.shape() || z0.rank() < 2 || n == 0 ||
      z0.extent(1) != sigmas.size() * n) {
    throw ShapeError("flow_interpolant_blocks: latents " + shape_to_string(z0.shape()) + " with " +
                     std::to_string(sigmas.size()) + " blocks of " + std::to_string(n));
  }
  for (double s : sigmas) {
    if (!(s >= 0.0 && s <= 1.0)) throw std::invalid_argument("flow_interpolant_blocks: sigma outside [0, 1]");
  }
  const std::size_t P = z0.extent(0);
  const std::size_t frames = z0.extent(1);
  const std::size_t inner = z0.size() / (P * frames);
  BasicTensor<T> out(z0.shape());
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t t = 0; t < frames; ++t) {
      const T s = static_cast<T>(sigmas[t / n]);
      const T c = static_cast<T>(1.0 - sigmas[t / n]);
      const std::size_t base = (p * frames + t) * inner;
      for (std::size_t i = base; i < base + inner; ++i) out[i] = c * z0[i] + s * eps[i];
    }
  }
  return out;
}

std::vector<double> diffusion_forcing_noise(RngStream& rng, std::size_t num_blocks) {
  if (num_blocks < 1) throw std::invalid_argument("diffusion_forcing_noise: need >= 1 block");
  std::vector<double> s(num_blocks);
  for (auto& v : s) v = rng.uniform();
  return s;
}

namespace {

template <typename T>
struct ExampleResult {
  double loss = 0.0;
  ModelParams<T> grads;
};

template <typename T>
void run_example(const Model<T>& model, const FlowExample<T>& ex, AttentionMode mode,
                 double grad_scale, bool want_grads, ExampleResult<T>& res) {
  const std::size_t n = model.config().block_frames;
  SequenceInputs<T> in;
  in.latents = flow_interpolant_blocks(ex.z0, ex.eps, ex.sigmas, n);
  in.actions = ex.actions;
  in.sigmas = ex.sigmas;
  in.assignment = ex.assignment;
  auto tape = want_grads ? std::make_unique<ForwardTape<T>>() : nullptr;
  const BasicTensor<T> pred = model.forward(in, mode, tape.get());

  const std::size_t P = ex.z0.extent(0);
  const std::size_t per_agent = ex.z0.size() / P;
  BasicTensor<T> diff(pred.shape());
  std::vector<double> agent_sum(P, 0.0);
  for (std::size_t p = 0; p < P; ++p) {
    double s = 0.0;
    for (std::size_t i = p * per_agent; i < (p + 1) * per_agent; ++i) {
      const T d = pred[i] - (ex.eps[i] - ex.z0[i]);
      diff[i] = d;
      s += static_cast<double>(d) * static_cast<double>(d);
    }
    agent_sum[p] = s;
  }
  double total = 0.0;
  for (std::size_t p : canonical_agent_order(ex.assignment)) total += agent_sum[p];
  res.loss = total / static_cast<double>(ex.z0.size());

  if (want_grads) {
    const T scale = static_cast<T>(2.0 * grad_scale / static_cast<double>(ex.z0.size()));
    for (auto& d : diff.data()) d *= scale;
    diff.reshape({pred.size() / model.config().latent_channels, model.config().latent_channels});
    res.grads = ModelParams<T>::zeros(model.config());
    model.backward(*tape, diff, res.grads);
  }
}

}  // namespace

template <typename T>
double flow_matching_loss(const Model<T>& model, std::span<const FlowExample<T>> batch,
                          ModelParams<T>* grads, AttentionMode mode) {
  if (batch.empty()) throw std::invalid_argument("flow_matching_loss: empty batch");
  for (const auto& ex : batch) {
    if (ex.z0.shape() != ex.eps.shape() || ex.z0.rank() != 5) {
      throw ShapeError("flow_matching_loss: z0 " + shape_to_string(ex.z0.shape()) + ", eps " +
                       shape_to_string(ex.eps.shape()));
    }
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<ExampleResult<T>> results(batch.size());
  const auto count = static_cast<std::int64_t>(batch.size());
  const bool parallel = model.exec() == Exec::parallel && !omp_in_parallel() && count > 1 &&
                        omp_get_max_threads() > 1;
  // Exceptions cannot leave an OpenMP region; the first one is rethrown.
  std::exception_ptr error;
#pragma omp parallel for schedule(static) if (parallel)
  for (std::int64_t i = 0; i < count; ++i) {
    try {
      run_example(model, batch[static_cast<std::size_t>(i)], mode, inv_b, grads != nullptr,
                  results[static_cast<std::size_t>(i)]);
    } catch (...) {
#pragma omp critical
      if (!error) error = std::current_exception();
    }
  }
  if (error) std::rethrow_exception(error);

  double loss = 0.0;
  for (const auto& r : results) loss += r.loss;
  if (grads) {
    if (grads->in_w.shape() != model.params().in_w.shape()) {
      *grads = ModelParams<T>::zeros(model.config());
    }
    for (const auto& r : results) grads->axpy(T{1}, r.grads);
  }
  return loss * inv_b;
}

FlowExample<float> make_example(const WorldSample& sample, const ToyModelConfig& config,
                                RngStream& rng) {
  FlowExample<float> ex;
  ex.z0 = sample.latents;
  ex.actions = sample.actions;
  const std::size_t P = sample.latents.extent(0);
  const std::size_t T = sample.latents.extent(1);
  if (T % config.block_frames != 0) {
    throw std::invalid_argument("make_example: " + std::to_string(T) +
                                " frames do not fill whole blocks of " +
                                std::to_string(config.block_frames));
  }
  RngStream ra = rng.split("assignment");
  ex.assignment = config.rope.p > 0 ? sample_assignment(P, config.pool_size, ra)
                                    : identity_assignment(P);
  RngStream rs = rng.split("sigma");
  ex.sigmas = diffusion_forcing_noise(rs, T / config.block_frames);
  RngStream re = rng.split("eps");
  ex.eps = Tensor(ex.z0.shape());
  for (auto& v : ex.eps.data()) v = static_cast<float>(re.normal());
  return ex;
}

void TrainConfig::validate() const {
  if (batch < 1 || agents < 1 || frames < 1 || eval_batch < 1) {
    throw std::invalid_argument("train: batch, agents, frames and eval_batch must be >= 1");
  }
  if (!(lr >= 0.0) || !(momentum >= 0.0 && momentum < 1.0)) {
    throw std::invalid_argument("train: lr must be >= 0 and momentum in [0, 1)");
  }
}

std::string TrainRecord::metrics_csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "step,loss,eval_loss\n";
  std::size_t e = 0;
  for (std::size_t s = 0; s <= loss.size(); ++s) {
    const bool has_eval = e < eval.size() && eval[e].first == s;
    if (s == loss.size() && !has_eval) break;
    os << s << ',';
    if (s < loss.size()) os << loss[s];
    os << ',';
    if (has_eval) os << eval[e++].second;
    os << '\n';
  }
  return os.str();
}

TrainRecord train_toy(Model<float>& model, const TrainConfig& config,
                      const std::function<void(std::size_t, double)>& progress) {
  config.validate();
  const ToyModelConfig& mc = model.config();
  const SyntheticWorld world(mc, config.world);
  const RngStream root(config.seed);

  std::vector<FlowExample<float>> eval_set;
  {
    RngStream er = root.split("eval");
    for (std::size_t i = 0; i < config.eval_batch; ++i) {
      RngStream r = er.split(i);
      const WorldSample s = world.sample(r, config.agents, config.frames);
      eval_set.push_back(make_example(s, mc, r));
    }
  }

  TrainRecord rec;
  auto evaluate = [&](std::size_t step) {
    rec.eval.emplace_back(step, flow_matching_loss<float>(model, eval_set));
  };
  evaluate(0);

  ModelParams<float> velocity = ModelParams<float>::zeros(mc);
  ModelParams<float> grads = ModelParams<float>::zeros(mc);
  const RngStream train_rng = root.split("train");
  for (std::size_t step = 0; step < config.steps; ++step) {
    RngStream sr = train_rng.split(step);
    std::vector<FlowExample<float>> batch;
    for (std::size_t i = 0; i < config.batch; ++i) {
      RngStream r = sr.split(i);
      const WorldSample s = world.sample(r, config.agents, config.frames);
      batch.push_back(make_example(s, mc, r));
    }
    grads.fill(0.0f);
    const double loss = flow_matching_loss<float>(model, batch, &grads);
    rec.loss.push_back(loss);
    // v <- mu v + g;  theta <- theta - lr v
    velocity.axpy(static_cast<float>(config.momentum) - 1.0f, velocity);
    velocity.axpy(1.0f, grads);
    model.params().axpy(static_cast<float>(-config.lr), velocity);
    if (progress) progress(step, loss);
    const std::size_t done = step + 1;
    if ((config.eval_every > 0 && done % config.eval_every == 0) || done == config.steps) {
      evaluate(done);
    }
  }
  return rec;
}

template BasicTensor<float> flow_interpolant(const BasicTensor<float>&, const BasicTensor<float>&, double);
template BasicTensor<double> flow_interpolant(const BasicTensor<double>&, const BasicTensor<double>&, double);
template BasicTensor<float> flow_interpolant_blocks(const BasicTensor<float>&, const BasicTensor<float>&,
                                                    const std::vector<double>&, std::size_t);
template BasicTensor<double> flow_interpolant_blocks(const BasicTensor<double>&, const BasicTensor<double>&,
                                                     const std::vector<double>&, std::size_t);
template double flow_matching_loss(const Model<float>&, std::span<const FlowExample<float>>,
                                   ModelParams<float>*, AttentionMode);
template double flow_matching_loss(const Model<double>&, std::span<const FlowExample<double>>,
                                   ModelParams<double>*, AttentionMode);

}  // namespace hubsim
