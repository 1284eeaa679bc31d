#include "kinegraph/micro_train.hpp"

#include <cmath>
#include <random>

#include "kinegraph/error.hpp"

namespace kinegraph {

MicroTrainConfig MicroTrainConfig::from_json(const Json& doc, const std::filesystem::path& base_dir) {
  if (!doc.is_object()) throw SchemaError("", "micro-train config must be an object");
  if (!doc.contains("model")) throw SchemaError("/model");
  MicroTrainConfig c;
  c.model = ModelConfig::from_json(doc["model"]);
  try {
    c.steps = doc.value("steps", c.steps);
    c.lr = doc.value("lr", c.lr);
    c.h = doc.value("h", c.h);
    c.samples_per_class = doc.value("samples_per_class", c.samples_per_class);
    c.noise = doc.value("noise", c.noise);
    c.data_seed = doc.value("data_seed", c.data_seed);
  } catch (const Json::exception& e) {
    throw SchemaError("", e.what());
  }
  if (!doc.contains("embeddings") || !doc["embeddings"].is_string()) throw SchemaError("/embeddings");
  c.embeddings = doc["embeddings"].get<std::string>();
  if (c.embeddings.is_relative()) c.embeddings = base_dir / c.embeddings;
  if (!(c.lr >= 0.0) || !(c.h > 0.0) || c.samples_per_class == 0)
    throw Error(ErrorKind::InvalidArgument, "lr must be >= 0, h > 0 and samples_per_class > 0");
  return c;
}

MicroTrainConfig MicroTrainConfig::load(const std::filesystem::path& path) {
  return from_json(read_json_file(path), path.parent_path());
}

Json MicroTrainConfig::to_json() const {
  return {{"model", model.to_json()},        {"steps", steps},
          {"lr", lr},                        {"h", h},
          {"samples_per_class", samples_per_class}, {"noise", noise},
          {"data_seed", data_seed},          {"embeddings", embeddings.string()}};
}

LabeledSet synthetic_dataset(const ModelConfig& cfg, std::size_t per_class, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, noise);
  LabeledSet set;
  for (std::size_t c = 0; c < cfg.classes; ++c)
    for (std::size_t i = 0; i < per_class; ++i) {
      SkeletonSequence s = SkeletonSequence::zeros(cfg.frames, cfg.joints, cfg.in_dims);
      const double phase = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(per_class);
      for (std::size_t t = 0; t < cfg.frames; ++t) {
        const double wave = 0.5 + 0.25 * std::sin(phase + static_cast<double>(t));
        for (std::size_t v = 0; v < cfg.joints; ++v) {
          s.at(t, v, 1 % cfg.in_dims) += 0.3 * static_cast<double>(v);
          if (v / 2 == c % ((cfg.joints + 1) / 2)) s.at(t, v, c % cfg.in_dims) += wave;
          for (std::size_t k = 0; k < cfg.in_dims; ++k) s.at(t, v, k) += jitter(rng);
        }
      }
      s.label = static_cast<int>(c);
      set.samples.push_back(std::move(s));
      set.labels.push_back(c);
    }
  return set;
}

void check_budget(const ModelConfig& cfg, const MicroBudget& budget) {
  std::size_t widest = 0;
  for (std::size_t c : cfg.channels) widest = std::max(widest, c);
  if (cfg.joints > budget.max_joints || cfg.frames > budget.max_frames || widest > budget.max_channels ||
      cfg.blocks() > budget.max_blocks || cfg.classes > budget.max_classes)
    throw Error(ErrorKind::BudgetExceeded, "micro model exceeds V<=6, T<=8, C<=8, blocks<=2, M<=3");
  const std::size_t count = parameter_count(cfg);
  if (count > budget.max_params)
    throw Error(ErrorKind::BudgetExceeded,
                std::to_string(count) + " parameters, limit " + std::to_string(budget.max_params));
}

LossBreakdown training_loss(const ModelParams& params, const LabeledSet& data, const ClassTemplateSet& templates) {
  const ForwardResult out = model_forward(data.samples, params, {BnMode::Batch, &templates, nullptr});
  return batch_loss(out, data.labels, params.cfg.lambda);
}

double fd_gradient(ModelParams& params, const LabeledSet& data, const ClassTemplateSet& templates,
                   std::size_t coordinate, double h) {
  double& x = params.values.at(coordinate);
  const double saved = x;
  x = saved + h;
  const double up = training_loss(params, data, templates).total;
  x = saved - h;
  const double down = training_loss(params, data, templates).total;
  x = saved;
  return (up - down) / (2.0 * h);
}

Json TrainTrace::to_json() const {
  Json losses = Json::array();
  for (const LossBreakdown& l : steps) losses.push_back(l.to_json());
  return {{"steps", losses},
          {"initial", steps.empty() ? final_loss.to_json() : steps.front().to_json()},
          {"final", final_loss.to_json()},
          {"train_accuracy", train_accuracy},
          {"parameters", parameters},
          {"seed", seed}};
}

namespace {

// Loss of the training objective resumed from a cached encoder prefix.
double resumed_loss(const EncoderState& prefix, const ModelParams& p, const LabeledSet& data,
                    const ClassTemplateSet& templates) {
  const ForwardOptions opts{BnMode::Batch, &templates, nullptr};
  EncoderState state = prefix;
  run_blocks(state, p, opts, p.layout.blocks.size());
  return batch_loss(apply_heads(state, p, opts), data.labels, p.cfg.lambda).total;
}

// Number of leading blocks that parameter i cannot influence; -1 for the embedding.
std::vector<long> first_affected(const ModelLayout& l) {
  std::vector<std::size_t> starts;
  for (const BlockLayout& b : l.blocks) starts.push_back(b.query.offset);
  starts.push_back(l.fc_w.offset);
  std::vector<long> out(l.total, -1);
  for (std::size_t b = 0; b < starts.size(); ++b) {
    const std::size_t end = b + 1 < starts.size() ? starts[b + 1] : l.total;
    for (std::size_t i = starts[b]; i < end; ++i) out[i] = static_cast<long>(b);
  }
  return out;
}

}  // namespace

TrainResult micro_train(const LabeledSet& data, const ClassTemplateSet& templates, const MicroTrainConfig& cfg,
                        std::uint64_t seed) {
  check_budget(cfg.model);
  if (data.samples.empty()) throw Error(ErrorKind::EmptySampleSet, "no training samples");
  TrainResult r{{}, init_params(cfg.model, seed)};
  ModelParams& p = r.params;
  const std::size_t blocks = p.layout.blocks.size();
  const std::vector<long> stage = first_affected(p.layout);
  const ForwardOptions opts{BnMode::Batch, &templates, nullptr};
  std::vector<double> grad(p.count());
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    r.trace.steps.push_back(training_loss(p, data, templates));
    if (cfg.lr == 0.0) continue;
    // prefix[k] holds the encoder state after k blocks at the current parameters.
    std::vector<EncoderState> prefix{embed_batch(data.samples, p)};
    for (std::size_t b = 0; b < blocks; ++b) {
      prefix.push_back(prefix.back());
      run_blocks(prefix.back(), p, opts, b + 1);
    }
    for (std::size_t i = 0; i < p.count(); ++i) {
      if (stage[i] < 0) {
        grad[i] = fd_gradient(p, data, templates, i, cfg.h);
        continue;
      }
      const EncoderState& from = prefix[static_cast<std::size_t>(stage[i])];
      double& x = p.values[i];
      const double saved = x;
      x = saved + cfg.h;
      const double up = resumed_loss(from, p, data, templates);
      x = saved - cfg.h;
      const double down = resumed_loss(from, p, data, templates);
      x = saved;
      grad[i] = (up - down) / (2.0 * cfg.h);
    }
    for (std::size_t i = 0; i < p.count(); ++i) p.values[i] -= cfg.lr * grad[i];
  }
  r.trace.final_loss = training_loss(p, data, templates);

  // Freeze the batch statistics of the trained model for evaluation.
  std::vector<BatchNormStats> stats;
  model_forward(data.samples, p, {BnMode::Batch, nullptr, &stats});
  p.bn = std::move(stats);

  const ForwardResult eval = model_forward(data.samples, p, {BnMode::Frozen, nullptr, nullptr});
  std::size_t correct = 0;
  for (std::size_t n = 0; n < data.labels.size(); ++n) correct += argmax(eval.logits.row(n)) == data.labels[n];
  r.trace.train_accuracy = static_cast<double>(correct) / static_cast<double>(data.labels.size());
  r.trace.parameters = p.count();
  r.trace.seed = seed;
  return r;
}

}  // namespace kinegraph
