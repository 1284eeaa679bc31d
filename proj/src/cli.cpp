#include "kinegraph/cli.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <vector>

#include "CLI11.hpp"
#include "kinegraph/bone_select.hpp"
#include "kinegraph/error.hpp"
#include "kinegraph/mha_gc.hpp"
#include "kinegraph/micro_train.hpp"
#include "kinegraph/model.hpp"
#include "kinegraph/prior_graphs.hpp"
#include "kinegraph/skeleton_io.hpp"

namespace fs = std::filesystem;

namespace kinegraph::cli {

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorKind::Io, "SHA-256 digest failed");
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < length; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

namespace {

// Everything one command reports back to the dispatcher.
struct Run {
  std::string command;
  Json config = Json::object();
  std::vector<fs::path> inputs;
  std::vector<std::pair<fs::path, Json>> outputs;
};

std::string file_digest(const fs::path& path) {
  if (fs::is_directory(path)) {
    // Digest of "name:digest" lines over the sample files, sorted by name.
    std::string listing;
    for (const auto& f : sequence_files(path)) listing += f.filename().string() + ":" + sha256_hex(read_text_file(f)) + "\n";
    return sha256_hex(listing);
  }
  return sha256_hex(read_text_file(path));
}

Json read_matrix_doc(const fs::path& path, const std::string& what) {
  Json doc = read_json_file(path);
  // Accept a bare 2-D array or an object carrying it under `what`.
  if (doc.is_object() && doc.contains(what)) return doc[what];
  return doc;
}

Matrix load_matrix(const fs::path& path, const std::string& key) {
  return matrix_from_json(read_matrix_doc(path, key), "");
}

Json scores_json(const std::vector<std::string>& ids, const Matrix& logits) {
  Json samples = Json::array();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto row = logits.row(i);
    samples.push_back({{"id", ids[i]}, {"logits", std::vector<double>(row.begin(), row.end())}});
  }
  return {{"samples", samples}};
}

std::pair<std::vector<std::string>, Matrix> load_scores(const fs::path& path) {
  const Json doc = read_json_file(path);
  if (!doc.is_object() || !doc.contains("samples") || !doc["samples"].is_array()) throw SchemaError("/samples");
  std::vector<std::string> ids;
  std::vector<std::vector<double>> rows;
  for (std::size_t i = 0; i < doc["samples"].size(); ++i) {
    const Json& s = doc["samples"][i];
    const std::string at = "/samples/" + std::to_string(i);
    if (!s.is_object() || !s.contains("logits") || !s["logits"].is_array()) throw SchemaError(at + "/logits");
    ids.push_back(s.contains("id") ? (s["id"].is_string() ? s["id"].get<std::string>() : s["id"].dump())
                                   : std::to_string(i));
    std::vector<double> row;
    for (std::size_t k = 0; k < s["logits"].size(); ++k) {
      if (!s["logits"][k].is_number()) throw SchemaError(at + "/logits/" + std::to_string(k));
      row.push_back(s["logits"][k].get<double>());
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error(ErrorKind::ShapeMismatch, path.string() + ": sample " + std::to_string(i) + " has " +
                                                std::to_string(row.size()) + " logits, expected " +
                                                std::to_string(rows.front().size()));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorKind::EmptySampleSet, path.string() + " has no samples");
  return {ids, Matrix::from_rows(rows)};
}

// Named sequences from a file or directory.
std::vector<std::pair<std::string, SkeletonSequence>> load_named(const fs::path& path) {
  std::vector<std::pair<std::string, SkeletonSequence>> out;
  if (fs::is_directory(path)) {
    for (const auto& f : sequence_files(path)) out.emplace_back(f.stem().string(), load_sequence_file(f));
  } else {
    out.emplace_back(path.stem().string(), load_sequence_file(path));
  }
  if (out.empty()) throw Error(ErrorKind::EmptySampleSet, "no sequences under " + path.string());
  return out;
}

std::optional<GprGraph> maybe_gpr(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return GprGraph::from_json(read_json_file(path));
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Skeleton graph toolkit: parsing, prior graphs, bone selection, diffusion, spectra and models",
               "kinegraph"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::uint64_t seed = 0;
  unsigned threads = 1;
  bool quiet = false;
  std::string precision = "9";
  app.add_option("--seed", seed, "Seed for every stochastic step")->capture_default_str();
  app.add_option("--threads", threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_flag("--quiet", quiet, "Suppress progress on stderr");
  app.add_option("--precision", precision, "Float output: 9 significant digits or full")
      ->check(CLI::IsMember({"9", "full"}))
      ->capture_default_str();
  app.fallthrough();

  std::function<Run()> action;

  // parse ------------------------------------------------------------------
  auto* parse = app.add_subcommand("parse", "Parse an NTU .skeleton or canonical JSON file");
  std::string parse_in, parse_out, parse_format = "ntu";
  std::size_t parse_body = 0, parse_frames = 0, parse_center = 0;
  parse->add_option("--in", parse_in)->required();
  parse->add_option("--format", parse_format)->check(CLI::IsMember({"ntu", "json"}))->capture_default_str();
  parse->add_option("--out", parse_out)->required();
  parse->add_option("--body", parse_body, "Body slot for multi-body NTU files")->capture_default_str();
  parse->add_option("--frames", parse_frames, "Resample to this many frames and center (0 keeps the input)");
  parse->add_option("--center-joint", parse_center)->capture_default_str();
  parse->callback([&] {
    action = [&] {
      Run r{"parse", {{"format", parse_format}, {"body", parse_body}, {"frames", parse_frames},
                      {"center_joint", parse_center}}, {parse_in}, {}};
      SkeletonSequence seq;
      if (parse_format == "ntu") {
        auto bodies = parse_ntu_file(parse_in);
        if (parse_body >= bodies.size())
          throw Error(ErrorKind::InvalidArgument, "file has " + std::to_string(bodies.size()) + " bodies");
        seq = std::move(bodies[parse_body]);
      } else {
        seq = read_canonical(read_text_file(parse_in));
      }
      if (parse_frames > 0) seq = preprocess(seq, {parse_frames, parse_center});
      r.outputs.emplace_back(parse_out, canonical_json(seq));
      return r;
    };
  });

  // graphs -----------------------------------------------------------------
  auto* graphs = app.add_subcommand("graphs", "Build the GPR graph and class templates from embeddings");
  std::string emb_path, gpr_out, tc_out;
  graphs->add_option("--embeddings", emb_path)->required();
  graphs->add_option("--out-gpr", gpr_out)->required();
  graphs->add_option("--out-tc", tc_out)->required();
  graphs->callback([&] {
    action = [&] {
      Run r{"graphs", Json::object(), {emb_path}, {}};
      const EmbeddingTable table = EmbeddingTable::load(emb_path);
      r.outputs.emplace_back(gpr_out, build_gpr(class_centroids(table)).to_json());
      r.outputs.emplace_back(tc_out, build_templates(table).to_json());
      return r;
    };
  });

  // select-bones -----------------------------------------------------------
  auto* select = app.add_subcommand("select-bones", "Choose the minimum-variation bone set");
  std::string sel_data, sel_gpr, sel_out;
  std::size_t sel_base = 0;
  select->add_option("--data", sel_data, "Directory of .skeleton / canonical JSON sequences")->required();
  select->add_option("--gpr", sel_gpr, "GPR graph weighting the scores");
  select->add_option("--base", sel_base)->capture_default_str();
  select->add_option("--out", sel_out)->required();
  select->callback([&] {
    action = [&] {
      Run r{"select-bones", {{"base", sel_base}, {"gpr", !sel_gpr.empty()}}, {sel_data}, {}};
      if (!sel_gpr.empty()) r.inputs.emplace_back(sel_gpr);
      const auto scores = dataset_scores(load_sequence_dir(sel_data), maybe_gpr(sel_gpr), threads);
      const BoneMatrix bones = select_min_assignment(scores, sel_base);
      Json doc = bones.to_json();
      doc["cost"] = assignment_cost(scores, bones);
      doc["samples"] = scores.n_samples;
      r.outputs.emplace_back(sel_out, doc);
      return r;
    };
  });

  // diffuse ----------------------------------------------------------------
  auto* diffuse = app.add_subcommand("diffuse", "Multi-hop diffusion of an attention matrix");
  std::string dif_abar, dif_features, dif_out, dif_mode = "exact";
  double dif_beta = 0.5;
  std::size_t dif_hops = 4, dif_k = 20;
  diffuse->add_option("--abar", dif_abar)->required();
  diffuse->add_option("--beta", dif_beta)->capture_default_str();
  diffuse->add_option("--hops", dif_hops)->capture_default_str();
  diffuse->add_option("--mode", dif_mode)->check(CLI::IsMember({"exact", "iter"}))->capture_default_str();
  diffuse->add_option("--K", dif_k, "Iterations in iter mode")->capture_default_str();
  diffuse->add_option("--features", dif_features, "V x C features (identity when omitted)");
  diffuse->add_option("--out", dif_out)->required();
  diffuse->callback([&] {
    action = [&] {
      Run r{"diffuse", {{"beta", dif_beta}, {"hops", dif_hops}, {"mode", dif_mode}, {"K", dif_k}}, {dif_abar}, {}};
      const Matrix a = load_matrix(dif_abar, "abar");
      std::optional<Matrix> f;
      if (!dif_features.empty()) {
        f = load_matrix(dif_features, "features");
        r.inputs.emplace_back(dif_features);
      }
      Matrix result;
      if (dif_mode == "exact") {
        result = multi_hop_exact(a, dif_beta, dif_hops);
        if (f) result = matmul(result, *f);
      } else {
        result = diffuse_iterative(a, f ? *f : Matrix::identity(a.rows()), dif_beta, dif_k);
      }
      if (!all_finite(result)) throw Error(ErrorKind::DomainError, "diffusion produced non-finite values");
      r.outputs.emplace_back(dif_out, Json{{"mode", dif_mode},
                                           {"beta", dif_beta},
                                           {"steps", dif_mode == "exact" ? dif_hops : dif_k},
                                           {"result", matrix_to_json(result)}});
      return r;
    };
  });

  // spectra ----------------------------------------------------------------
  auto* spectra = app.add_subcommand("spectra", "Check the diffused eigenvalue relation and degree statistics");
  std::string spe_abar, spe_report;
  double spe_beta = 0.5;
  std::size_t spe_trunc = 200;
  bool spe_normalize = false;
  spectra->add_option("--abar", spe_abar)->required();
  spectra->add_option("--beta", spe_beta)->capture_default_str();
  spectra->add_option("--trunc", spe_trunc)->capture_default_str();
  spectra->add_flag("--normalize", spe_normalize, "Symmetrize and degree-normalize first");
  spectra->add_option("--report", spe_report)->required();
  spectra->callback([&] {
    action = [&] {
      Run r{"spectra", {{"beta", spe_beta}, {"trunc", spe_trunc}, {"normalize", spe_normalize}}, {spe_abar}, {}};
      Matrix a = load_matrix(spe_abar, "abar");
      const DegreeReport degrees = degree_stats(a);
      if (spe_normalize) a = spectral_normalize(a);
      Json doc = verify_eigen_relation(a, spe_beta, spe_trunc).to_json();
      doc["degree"] = degrees.to_json();
      r.outputs.emplace_back(spe_report, doc);
      return r;
    };
  });

  // forward ----------------------------------------------------------------
  auto* forward = app.add_subcommand("forward", "Score sequences with a saved model");
  std::string fwd_model, fwd_data, fwd_scores, fwd_bones;
  bool fwd_preprocess = false;
  forward->add_option("--model", fwd_model)->required();
  forward->add_option("--data", fwd_data, "Sequence file or directory")->required();
  forward->add_option("--out-scores", fwd_scores)->required();
  forward->add_option("--bones", fwd_bones, "Bone matrix applied to the input first");
  forward->add_flag("--preprocess", fwd_preprocess, "Resample to the model's frame count and center on joint 0");
  forward->callback([&] {
    action = [&] {
      Run r{"forward", {{"preprocess", fwd_preprocess}, {"bones", !fwd_bones.empty()}}, {fwd_model, fwd_data}, {}};
      const ModelParams params = ModelParams::load(fwd_model);
      std::optional<BoneMatrix> bones;
      if (!fwd_bones.empty()) {
        bones = BoneMatrix::from_json(read_json_file(fwd_bones));
        r.inputs.emplace_back(fwd_bones);
      }
      std::vector<std::string> ids;
      std::vector<SkeletonSequence> batch;
      for (auto& [id, seq] : load_named(fwd_data)) {
        SkeletonSequence s = fwd_preprocess ? preprocess(seq, {params.cfg.frames, 0}) : std::move(seq);
        if (bones) s = weight_skeleton(s, *bones);
        ids.push_back(id);
        batch.push_back(std::move(s));
      }
      const ForwardResult res = model_forward(batch, params);
      if (!all_finite(res.logits)) throw Error(ErrorKind::DomainError, "non-finite logits");
      r.outputs.emplace_back(fwd_scores, scores_json(ids, res.logits));
      return r;
    };
  });

  // micro-train ------------------------------------------------------------
  auto* micro = app.add_subcommand("micro-train", "Finite-difference training on the synthetic micro dataset");
  std::string mt_config, mt_trace, mt_model;
  std::optional<std::size_t> mt_steps;
  micro->add_option("--config", mt_config)->required();
  micro->add_option("--steps", mt_steps, "Override the configured step count");
  micro->add_option("--trace", mt_trace)->required();
  micro->add_option("--out-model", mt_model, "Write the trained model here");
  micro->callback([&] {
    action = [&] {
      MicroTrainConfig cfg = MicroTrainConfig::load(mt_config);
      if (mt_steps) cfg.steps = *mt_steps;
      Run r{"micro-train", cfg.to_json(), {mt_config, cfg.embeddings}, {}};
      r.config.erase("embeddings");  // absolute path; the digest covers the file itself
      const LabeledSet data = synthetic_dataset(cfg.model, cfg.samples_per_class, cfg.noise, cfg.data_seed);
      const ClassTemplateSet templates = build_templates(EmbeddingTable::load(cfg.embeddings));
      if (!quiet) err << "micro-train: " << parameter_count(cfg.model) << " parameters, " << cfg.steps << " steps\n";
      const TrainResult res = micro_train(data, templates, cfg, seed);
      if (!std::isfinite(res.trace.final_loss.total)) throw Error(ErrorKind::DomainError, "loss diverged");
      r.outputs.emplace_back(mt_trace, res.trace.to_json());
      if (!mt_model.empty()) r.outputs.emplace_back(mt_model, res.params.to_json());
      return r;
    };
  });

  // ensemble ---------------------------------------------------------------
  auto* ensemble = app.add_subcommand("ensemble", "Fuse per-stream scores by summed softmax");
  std::vector<std::string> ens_scores;
  std::string ens_out;
  ensemble->add_option("--scores", ens_scores)->required()->expected(1, -1);
  ensemble->add_option("--out", ens_out)->required();
  ensemble->callback([&] {
    action = [&] {
      Run r{"ensemble", {{"streams", ens_scores.size()}}, {}, {}};
      std::vector<Matrix> streams;
      std::vector<std::string> ids;
      for (const auto& path : ens_scores) {
        auto [stream_ids, logits] = load_scores(path);
        if (ids.empty()) ids = stream_ids;
        streams.push_back(std::move(logits));
        r.inputs.emplace_back(path);
      }
      const EnsembleResult fused = ensemble_scores(streams);
      Json samples = Json::array();
      for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto row = fused.fused.row(i);
        samples.push_back({{"id", ids[i]},
                           {"fused", std::vector<double>(row.begin(), row.end())},
                           {"prediction", fused.predictions[i]}});
      }
      r.outputs.emplace_back(ens_out, Json{{"samples", samples}, {"streams", streams.size()}});
      return r;
    };
  });

  // report -----------------------------------------------------------------
  auto* report = app.add_subcommand("report", "Bone-variation diagnostics for a 25-joint dataset");
  std::string rep_data, rep_gpr, rep_out;
  std::size_t rep_base = 20;
  report->add_option("--data", rep_data)->required();
  report->add_option("--gpr", rep_gpr);
  report->add_option("--base", rep_base)->capture_default_str();
  report->add_option("--out", rep_out)->required();
  report->callback([&] {
    action = [&] {
      Run r{"report", {{"base", rep_base}, {"gpr", !rep_gpr.empty()}}, {rep_data}, {}};
      if (!rep_gpr.empty()) r.inputs.emplace_back(rep_gpr);
      const auto scores = dataset_scores(load_sequence_dir(rep_data), maybe_gpr(rep_gpr), threads);
      Json doc{{"samples", scores.n_samples}, {"mean_pair_score", mean_pair_score(scores)}};
      const BoneMatrix lo = select_min_assignment(scores, rep_base);
      const BoneMatrix hi = select_max_assignment(scores, rep_base);
      doc["min_sum"] = assignment_cost(scores, lo);
      doc["max_sum"] = assignment_cost(scores, hi);
      doc["min_bones"] = lo.to_json();
      if (scores.joints() == 25) doc["physical_sum"] = assignment_cost(scores, ntu_physical_bones());
      r.outputs.emplace_back(rep_out, doc);
      return r;
    };
  });

  // Unknown subcommands get the usage text; every other parse failure is a
  // single diagnostic line.
  static const std::set<std::string> kCommands{"parse",       "graphs",   "select-bones", "diffuse", "spectra",
                                                "forward",     "micro-train", "ensemble", "report"};
  for (int i = 1; i < argc; ++i) {
    const std::string arg = argv[i];
    if (arg.rfind("-", 0) == 0) {
      if (arg.find('=') == std::string::npos && (arg == "--seed" || arg == "--threads" || arg == "--precision")) ++i;
      continue;
    }
    if (!kCommands.count(arg)) {
      err << "kinegraph: UnknownCommand: " << arg << "\n" << app.help();
      return 2;
    }
    break;
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << kVersion << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    err << "kinegraph: " << msg << "\n";
    return 2;
  }

  const auto started = std::chrono::steady_clock::now();
  try {
    Run r = action();
    const FloatFormat fmt = precision == "full" ? FloatFormat::Full : FloatFormat::Significant9;
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    Json input_digests = Json::object();
    for (const auto& p : r.inputs) input_digests[p.string()] = file_digest(p);
    for (const auto& [path, doc] : r.outputs) {
      if (path.has_parent_path()) fs::create_directories(path.parent_path());
      write_text_file(path, canonical_dump(doc, fmt));
      const Json manifest{{"command", r.command},
                          {"config_digest", sha256_hex(canonical_dump(r.config, FloatFormat::Full))},
                          {"config", r.config},
                          {"input_digests", input_digests},
                          {"output_digest", sha256_hex(read_text_file(path))},
                          {"tool_version", std::string(kVersion)},
                          {"seed", seed},
                          {"threads", threads},
                          {"wall_time_seconds", wall}};
      write_text_file(fs::path(path.string() + ".manifest.json"), canonical_dump(manifest, FloatFormat::Full));
      out << path.string() << "\n";
    }
    return 0;
  } catch (const Error& e) {
    err << "kinegraph: " << e.what() << "\n";
    return is_numerical(e.kind()) ? 3 : 2;
  } catch (const Json::exception& e) {
    err << "kinegraph: SchemaViolation: " << e.what() << "\n";
    return 2;
  } catch (const fs::filesystem_error& e) {
    err << "kinegraph: Io: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "kinegraph: internal error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace kinegraph::cli
