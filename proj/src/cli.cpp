#include "sidforge/cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

namespace sidforge {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct Context {
  RunConfig config;
  std::string digest;
  fs::path out;
  int threads = 1;
  std::ostream* log = nullptr;
};

std::string dump(const json& doc) { return doc.dump(2) + "\n"; }

void emit(const Context& ctx, const fs::path& path, std::string_view content) {
  write_file_atomic(path, content);
  *ctx.log << "wrote " << path.string() << "\n";
}

std::string digest_comment(const Context& ctx) { return "# config_digest " + ctx.digest + "\n"; }

fs::path checkpoint_path(const Context& ctx, Scheme s) { return ctx.out / (scheme_name(s) + ".ckpt"); }

Checkpoint load_scheme_checkpoint(const Context& ctx, Scheme s) {
  const fs::path path = checkpoint_path(ctx, s);
  if (!fs::exists(path)) {
    throw InputError("cli", "missing checkpoint " + path.string() + "; run the matching train command first");
  }
  Checkpoint ckpt = load_checkpoint(path);
  if (ckpt.config_digest != ctx.digest) {
    throw InputError("cli", path.string() + " was produced under config digest " + ckpt.config_digest +
                                ", current digest is " + ctx.digest);
  }
  const auto expected = static_cast<ModelKind>(static_cast<int>(s) + 1);
  if (ckpt.kind() != expected) throw FormatError("cli", path.string() + " holds a different model kind");
  return ckpt;
}

// Schemes named by --scheme, or every scheme with a checkpoint on disk.
std::vector<Scheme> selected_schemes(const Context& ctx, const std::string& flag) {
  if (!flag.empty()) return {parse_scheme(flag)};
  std::vector<Scheme> out;
  for (Scheme s : kAllSchemes) {
    if (fs::exists(checkpoint_path(ctx, s))) out.push_back(s);
  }
  if (out.empty()) throw InputError("cli", "no checkpoints found in " + ctx.out.string());
  return out;
}

SchemeArtifacts artifacts_for(const Checkpoint& ckpt, const ItemCatalog& catalog, int threads) {
  SchemeArtifacts a;
  if (const auto* m = std::get_if<UniSidModel>(&ckpt.model)) {
    a.scheme = "unisid";
    a.table = assign_catalog(*m, catalog, threads).table;
    a.embed = [m](const Matrix& x) { return unisid_embed(*m, x); };
  } else if (const auto* m = std::get_if<RqKMeansModel>(&ckpt.model)) {
    a.scheme = "rqkmeans";
    a.table = rqkmeans_assign(*m, catalog);
    a.embed = [m](const Matrix& x) { return rqkmeans_embed(*m, x); };
  } else {
    const auto* v = std::get_if<RqVaeModel>(&ckpt.model);
    a.scheme = "rqvae";
    a.table = rqvae_assign(*v, catalog);
    a.embed = [v](const Matrix& x) { return rq_vae_encode(*v, x); };
  }
  return a;
}

void write_report(const Context& ctx, const fs::path& stem, const EvalReport& report) {
  emit(ctx, fs::path(stem) += ".json", dump(eval_report_to_json(report)));
  std::ostringstream csv;
  csv << digest_comment(ctx);
  write_eval_csv(report, csv);
  emit(ctx, fs::path(stem) += ".csv", csv.str());
}

std::string loss_csv(const Context& ctx, const LossReport& report) {
  std::ostringstream s;
  s << digest_comment(ctx);
  write_loss_csv(report, s);
  return s.str();
}

EvalReport evaluate_unisid(const Context& ctx, const UniSidModel& model, const ItemCatalog& catalog,
                           const std::string& name) {
  SchemeArtifacts a;
  a.scheme = name;
  a.table = assign_catalog(model, catalog, ctx.threads).table;
  a.embed = [&model](const Matrix& x) { return unisid_embed(model, x); };
  EvalReport report = evaluate_scheme(a, catalog, ctx.config.eval, ctx.config.seed, ctx.digest);
  report.extras["content_accuracy"] = content_accuracy(model, catalog, catalog.test_ids);
  return report;
}

void cmd_gen_data(const Context& ctx) {
  const ItemCatalog catalog = resolve_catalog(ctx.config);
  json doc = catalog_to_json(catalog);
  doc["config_digest"] = ctx.digest;
  emit(ctx, ctx.out / "catalog.json", doc.dump() + "\n");
}

void cmd_train_unisid(const Context& ctx) {
  const ItemCatalog catalog = resolve_catalog(ctx.config);
  TrainedUniSid trained = train_unisid(catalog, ctx.config.unisid);
  save_checkpoint({trained.model, ctx.digest}, checkpoint_path(ctx, Scheme::kUniSid));
  *ctx.log << "wrote " << checkpoint_path(ctx, Scheme::kUniSid).string() << "\n";
  emit(ctx, ctx.out / "unisid_loss.csv", loss_csv(ctx, trained.report));
}

void cmd_fit_rqkmeans(const Context& ctx) {
  const ItemCatalog catalog = resolve_catalog(ctx.config);
  FittedRqKMeans fitted = fit_rqkmeans(catalog, ctx.config.rqkmeans);
  save_checkpoint({fitted.model, ctx.digest}, checkpoint_path(ctx, Scheme::kRqKMeans));
  *ctx.log << "wrote " << checkpoint_path(ctx, Scheme::kRqKMeans).string() << "\n";
  emit(ctx, ctx.out / "rqkmeans_loss.csv", loss_csv(ctx, fitted.report));
}

void cmd_train_rqvae(const Context& ctx) {
  const ItemCatalog catalog = resolve_catalog(ctx.config);
  RqVaeFit fit = train_rqvae(catalog, ctx.config.rqvae);
  save_checkpoint({fit.model, ctx.digest}, checkpoint_path(ctx, Scheme::kRqVae));
  *ctx.log << "wrote " << checkpoint_path(ctx, Scheme::kRqVae).string() << "\n";
  std::ostringstream csv;
  csv << digest_comment(ctx);
  write_rq_vae_csv(fit.trace, csv);
  emit(ctx, ctx.out / "rqvae_loss.csv", csv.str());
}

void cmd_assign(const Context& ctx, const std::string& scheme_flag) {
  const ItemCatalog catalog = resolve_catalog(ctx.config);
  for (Scheme s : selected_schemes(ctx, scheme_flag)) {
    const SchemeArtifacts a = artifacts_for(load_scheme_checkpoint(ctx, s), catalog, ctx.threads);
    json doc = sid_table_to_json(a.table);
    doc["config_digest"] = ctx.digest;
    emit(ctx, ctx.out / ("sids_" + a.scheme + ".json"), dump(doc));
  }
}

void cmd_eval(const Context& ctx, const std::string& scheme_flag) {
  const ItemCatalog catalog = resolve_catalog(ctx.config);
  for (Scheme s : selected_schemes(ctx, scheme_flag)) {
    const Checkpoint ckpt = load_scheme_checkpoint(ctx, s);
    EvalReport report;
    if (const auto* m = std::get_if<UniSidModel>(&ckpt.model)) {
      report = evaluate_unisid(ctx, *m, catalog, "unisid");
    } else {
      report = evaluate_scheme(artifacts_for(ckpt, catalog, ctx.threads), catalog, ctx.config.eval,
                               ctx.config.seed, ctx.digest);
    }
    write_report(ctx, ctx.out / ("eval_" + scheme_name(s)), report);
  }
}

void add_alternate(EvalReport& report, const EvalReport& alt, const std::string& prefix) {
  for (std::size_t l = 0; l < alt.v_measure.size(); ++l) {
    report.extras[prefix + "v_measure_l" + std::to_string(l + 1)] = alt.v_measure[l];
  }
  for (const auto& [k, v] : alt.hit_rate) report.extras[prefix + "hr@" + std::to_string(k)] = v;
  for (const auto& [k, v] : alt.recall) report.extras[prefix + "recall@" + std::to_string(k)] = v;
  report.extras[prefix + "collision_rate"] = alt.collision_rate;
  report.extras[prefix + "content_accuracy"] = alt.extras.at("content_accuracy");
}

void cmd_sweep_lambda(const Context& ctx) {
  const ItemCatalog catalog = resolve_catalog(ctx.config);
  for (double lambda : kSweepLambdas) {
    TrainConfig cfg = ctx.config.unisid;
    cfg.lambda = lambda;
    const std::string label = lambda_label(lambda);
    const TrainedUniSid trained = train_unisid(catalog, cfg);
    EvalReport report = evaluate_unisid(ctx, trained.model, catalog, "unisid-lambda-" + label);
    report.extras["lambda"] = lambda;
    report.extras["decoder_joint"] = cfg.decoder_mode == DecoderMode::kJoint ? 1.0 : 0.0;
    if (ctx.config.sweep.both_modes) {
      TrainConfig alt = cfg;
      alt.decoder_mode = cfg.decoder_mode == DecoderMode::kJoint ? DecoderMode::kFrozenAfterWarmup : DecoderMode::kJoint;
      const TrainedUniSid other = train_unisid(catalog, alt);
      add_alternate(report, evaluate_unisid(ctx, other.model, catalog, report.scheme), "alt_decoder.");
    }
    write_report(ctx, ctx.out / "sweep" / ("lambda_" + label), report);
  }
}

void cmd_ablate_joint(const Context& ctx) {
  const ItemCatalog catalog = resolve_catalog(ctx.config);
  const std::pair<const char*, std::pair<bool, bool>> variants[] = {
      {"joint", {true, true}}, {"sid-only", {true, false}}, {"emb-only", {false, true}}};
  for (const auto& [name, flags] : variants) {
    TrainConfig cfg = ctx.config.unisid;
    cfg.use_sid = flags.first;
    cfg.use_emb = flags.second;
    const TrainedUniSid trained = train_unisid(catalog, cfg);
    write_report(ctx, ctx.out / "ablate" / name, evaluate_unisid(ctx, trained.model, catalog, std::string("unisid-") + name));
  }
}

void cmd_case_study(const Context& ctx) {
  const ItemCatalog catalog = resolve_catalog(ctx.config);
  const Checkpoint ckpt = load_scheme_checkpoint(ctx, Scheme::kUniSid);
  const auto& model = std::get<UniSidModel>(ckpt.model);
  const auto fwd = forward_batch(model, feature_matrix(catalog, catalog.test_ids));
  const ReconState state = recon_state(fwd.logits, fwd.embeddings, model.recon);
  std::ostringstream text;
  text << digest_comment(ctx);
  for (std::size_t j = 0; j < catalog.test_ids.size(); ++j) {
    const SummarySequence decoded = decode_summary(state.h_rec.col(static_cast<Eigen::Index>(j)), model.recon);
    text << catalog.test_ids[j] << "\t" << render_summary(decoded, model.recon.vocab) << "\n";
  }
  emit(ctx, ctx.out / "case_study.txt", text.str());
}

void cmd_report(const Context& ctx, std::ostream& out) {
  std::vector<EvalReport> reports;
  for (Scheme s : kAllSchemes) {
    const fs::path path = ctx.out / ("eval_" + scheme_name(s) + ".json");
    if (!fs::exists(path)) continue;
    EvalReport r;
    try {
      r = eval_report_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
      throw InputError("cli", path.string() + " is not valid JSON: " + e.what());
    }
    if (r.config_digest != ctx.digest) {
      throw InputError("cli", path.string() + " was produced under config digest " + r.config_digest);
    }
    reports.push_back(std::move(r));
  }
  if (reports.empty()) throw InputError("cli", "no eval reports found in " + ctx.out.string() + "; run eval first");

  std::vector<std::string> columns{"scheme"};
  for (std::size_t l = 0; l < reports.front().v_measure.size(); ++l) columns.push_back("v_l" + std::to_string(l + 1));
  for (const auto& [k, v] : reports.front().hit_rate) columns.push_back("hr@" + std::to_string(k));
  for (const auto& [k, v] : reports.front().recall) columns.push_back("r@" + std::to_string(k));
  columns.push_back("collision");

  std::ostringstream csv;
  std::ostringstream md;
  csv << digest_comment(ctx);
  char cell[64];
  for (std::size_t i = 0; i < columns.size(); ++i) {
    csv << (i ? "," : "") << columns[i];
    md << "| " << columns[i] << " ";
  }
  csv << "\n";
  md << "|\n";
  for (std::size_t i = 0; i < columns.size(); ++i) md << (i ? "|---:" : "|:---");
  md << "|\n";
  for (const auto& r : reports) {
    std::vector<double> values(r.v_measure.begin(), r.v_measure.end());
    for (const auto& [k, v] : r.hit_rate) values.push_back(v);
    for (const auto& [k, v] : r.recall) values.push_back(v);
    values.push_back(r.collision_rate);
    if (values.size() + 1 != columns.size()) throw InputError("cli", "eval reports disagree on their metric sets");
    csv << r.scheme;
    md << "| " << r.scheme << " ";
    for (double v : values) {
      std::snprintf(cell, sizeof(cell), "%.9g", v);
      csv << "," << cell;
      std::snprintf(cell, sizeof(cell), "%.4f", v);
      md << "| " << cell << " ";
    }
    csv << "\n";
    md << "|\n";
  }
  emit(ctx, ctx.out / "report.csv", csv.str());
  out << md.str();
}

}  // namespace

int worker_threads() {
  const char* env = std::getenv("SIDFORGE_THREADS");
  if (!env || !*env) return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) throw ConfigError("cli", "SIDFORGE_THREADS must be an integer in [1, 1024]");
  return static_cast<int>(v);
}

std::string lambda_label(double lambda) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", lambda);
  return buf;
}

ItemCatalog resolve_catalog(const RunConfig& config) {
  if (!config.paths.catalog.empty()) return catalog_from_json(json::parse(read_file(config.paths.catalog)));
  const fs::path stored = fs::path(config.paths.out) / "catalog.json";
  if (fs::exists(stored)) {
    ItemCatalog catalog = catalog_from_json(json::parse(read_file(stored)));
    if (!(catalog.spec == config.catalog)) {
      throw InputError("cli", stored.string() + " was generated from a different catalog spec; rerun gen-data");
    }
    return catalog;
  }
  return catalog_from_json(catalog_to_json(generate_catalog(config.catalog)));
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"sidforge: semantic-ID generation and evaluation toolkit", "sidforge"};
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string scheme;
  app.add_option("--config", config_path, "Run configuration JSON");
  app.add_option("--seed", seed, "Seed overriding the configuration");
  app.add_option("--out", out_dir, "Output directory (overrides paths.out)");
  app.require_subcommand(1, 1);
  const std::pair<const char*, const char*> commands[] = {
      {"gen-data", "Generate the synthetic catalog"},
      {"train-unisid", "Train the unified SID/embedding model"},
      {"fit-rqkmeans", "Train the stage-1 embedder and fit residual k-means codebooks"},
      {"train-rqvae", "Train the RQ-VAE baseline"},
      {"assign", "Write SID tables for trained schemes"},
      {"eval", "Evaluate trained schemes"},
      {"sweep-lambda", "Train and evaluate UniSID for each reconstruction weight"},
      {"ablate-joint", "Compare joint, SID-only and embedding-only training"},
      {"case-study", "Decode summaries for held-out items"},
      {"report", "Merge eval reports into one comparison table"}};
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help)->fallthrough();
    if (std::string_view(name) == "assign" || std::string_view(name) == "eval") {
      sub->add_option("--scheme", scheme, "unisid, rqkmeans or rqvae (default: every trained scheme)");
    }
  }

  if (!args.empty() && !args.front().empty() && args.front().front() != '-') {
    bool known = false;
    for (const auto& [name, help] : commands) known = known || args.front() == name;
    if (!known) {
      err << "sidforge: usage: unknown command '" << args.front() << "'\n" << app.help();
      return kExitUsage;
    }
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "sidforge: usage: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    Context ctx;
    ctx.config = load_run_config(config_path, seed);
    if (!out_dir.empty()) ctx.config.paths.out = out_dir;
    if (!ctx.config.paths.catalog.empty() && !fs::exists(ctx.config.paths.catalog)) {
      throw ConfigError("config", "field 'paths.catalog' names a missing file: " + ctx.config.paths.catalog);
    }
    ctx.digest = config_digest(ctx.config);
    ctx.out = ctx.config.paths.out;
    ctx.threads = worker_threads();
    ctx.log = &out;
    fs::create_directories(ctx.out);

    if (command == "gen-data") cmd_gen_data(ctx);
    else if (command == "train-unisid") cmd_train_unisid(ctx);
    else if (command == "fit-rqkmeans") cmd_fit_rqkmeans(ctx);
    else if (command == "train-rqvae") cmd_train_rqvae(ctx);
    else if (command == "assign") cmd_assign(ctx, scheme);
    else if (command == "eval") cmd_eval(ctx, scheme);
    else if (command == "sweep-lambda") cmd_sweep_lambda(ctx);
    else if (command == "ablate-joint") cmd_ablate_joint(ctx);
    else if (command == "case-study") cmd_case_study(ctx);
    else cmd_report(ctx, out);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "sidforge: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ConfigError& e) {
    err << "sidforge: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Error& e) {
    err << "sidforge: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const json::exception& e) {
    err << "sidforge: json: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "sidforge: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace sidforge
