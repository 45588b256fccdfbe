// SPDX-License-Identifier: Apache-2.0

#include "taskmod/eval/evaluator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>
#include <variant>

#include "taskmod/common/error.hpp"
#include "taskmod/synthdata/batch.hpp"

namespace taskmod {

namespace {

using Acc = std::variant<EdgeFAccumulator, MiouAccumulator, AngleAccumulator, RmseAccumulator>;

Acc make_acc(const TaskSpec& spec) {
  switch (spec.metric_kind) {
    case MetricKind::EdgeF:
      return EdgeFAccumulator{};
    case MetricKind::Miou:
      return MiouAccumulator(spec.out_channels);
    case MetricKind::MeanAngle:
      return AngleAccumulator{};
    case MetricKind::Rmse:
      return RmseAccumulator{};
  }
  throw ConfigError("unknown metric kind");
}

void fold(Acc& acc, const TaskSpec& spec, const ad::Tensor& out, const Batch& b) {
  const auto& s = out.shape;
  const std::size_t n = static_cast<std::size_t>(s[0]), c = static_cast<std::size_t>(s[1]);
  const std::size_t px = static_cast<std::size_t>(s[2] * s[3]);
  for (std::size_t i = 0; i < n; ++i) {
    const double* o = out.data.data() + i * c * px;
    switch (spec.metric_kind) {
      case MetricKind::EdgeF: {
        std::vector<double> prob(px);
        std::vector<std::uint8_t> gt(px);
        for (std::size_t p = 0; p < px; ++p) {
          prob[p] = 1.0 / (1.0 + std::exp(-o[p]));
          gt[p] = b.targets.edge[i * px + p] != 0.0;
        }
        std::get<EdgeFAccumulator>(acc).add(prob, gt);
        break;
      }
      case MetricKind::Miou: {
        std::vector<std::uint8_t> pred(px), gt(px);
        for (std::size_t p = 0; p < px; ++p) {
          std::size_t best = 0;
          for (std::size_t k = 1; k < c; ++k) {
            if (o[k * px + p] > o[best * px + p]) best = k;
          }
          pred[p] = static_cast<std::uint8_t>(best);
          gt[p] = static_cast<std::uint8_t>(b.targets.seg[i * px + p]);
        }
        std::get<MiouAccumulator>(acc).add(pred, gt);
        break;
      }
      case MetricKind::MeanAngle: {
        std::vector<double> pred(3 * px), gt(3 * px);
        std::vector<std::uint8_t> mask(px);
        for (std::size_t p = 0; p < px; ++p) {
          for (std::size_t k = 0; k < 3; ++k) {
            pred[3 * p + k] = o[k * px + p];
            gt[3 * p + k] = b.targets.normals[(i * 3 + k) * px + p];
          }
          mask[p] = b.targets.valid[i * px + p] != 0.0;
        }
        std::get<AngleAccumulator>(acc).add(pred, gt, mask);
        break;
      }
      case MetricKind::Rmse: {
        std::vector<double> pred(o, o + px);
        std::vector<double> gt(b.targets.depth.data.begin() + static_cast<std::ptrdiff_t>(i * px),
                               b.targets.depth.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * px));
        std::get<RmseAccumulator>(acc).add(pred, gt);
        break;
      }
    }
  }
}

}  // namespace

MetricsReport evaluate_network(const Network& net, const ParameterStore& store, const std::vector<Sample>& samples,
                               int threads, int batch_size) {
  if (samples.empty()) throw ConfigError("evaluate_network: no samples");
  if (batch_size < 1) throw ConfigError("evaluate_network: batch_size must be >= 1");
  const int side = net.config().input_size;
  for (const auto& s : samples) {
    if (s.size != side) {
      throw IncompatibleError("dataset size " + std::to_string(s.size) + " does not match network input " +
                              std::to_string(side));
    }
  }
  const auto& specs = net.config().tasks;
  const std::size_t nb = (samples.size() + static_cast<std::size_t>(batch_size) - 1) / static_cast<std::size_t>(batch_size);
  // accs[batch][task]
  std::vector<std::vector<Acc>> accs(nb);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto worker = [&] {
    try {
      for (std::size_t k = next++; k < nb; k = next++) {
        std::vector<std::size_t> idx;
        for (std::size_t i = k * static_cast<std::size_t>(batch_size);
             i < std::min(samples.size(), (k + 1) * static_cast<std::size_t>(batch_size)); ++i) {
          idx.push_back(i);
        }
        const Batch b = make_batch(samples, idx);
        std::vector<Acc> row;
        for (const auto& spec : specs) {
          ad::Graph g;
          ParamLeaves params(g, store);
          const auto r = net.forward(params, g.constant(b.images), spec.task_id, Mode::Eval);
          const ad::Tensor out = g.evaluate(r.output);
          row.push_back(make_acc(spec));
          fold(row.back(), spec, out, b);
        }
        accs[k] = std::move(row);
      }
    } catch (...) {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = std::current_exception();
      next = nb;
    }
  };
  const int workers = std::max(1, std::min(threads > 0 ? threads : default_threads(), static_cast<int>(nb)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);

  MetricsReport rep;
  rep.n_samples = static_cast<std::int64_t>(samples.size());
  for (std::size_t t = 0; t < specs.size(); ++t) {
    Acc total = make_acc(specs[t]);
    for (std::size_t k = 0; k < nb; ++k) {
      std::visit(
          [&](auto& a) {
            using A = std::decay_t<decltype(a)>;
            a.merge(std::get<A>(accs[k][t]));
          },
          total);
    }
    const double v = std::visit([](const auto& a) { return a.value(); }, total);
    rep.per_task[specs[t].name] = {specs[t].task_id, specs[t].metric_kind, specs[t].lower_is_better, v};
  }
  return rep;
}

}  // namespace taskmod
