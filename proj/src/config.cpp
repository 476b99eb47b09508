#include "sidforge/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>

namespace sidforge {
namespace {

using nlohmann::json;

// Reads the fields of one object, tracking which keys were consumed so that
// leftovers can be reported as unknown.
class Block {
 public:
  Block(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) fail("", "must be an object");
  }

  template <typename T>
  void read(const std::string& key, T& dst) {
    seen_.insert(key);
    if (!doc_.contains(key)) return;
    try {
      dst = doc_.at(key).get<T>();
    } catch (const json::exception&) {
      fail(key, "has the wrong type");
    }
  }

  bool has(const std::string& key) const { return doc_.contains(key); }

  Block child(const std::string& key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Block(doc_.contains(key) ? doc_.at(key) : empty, field(key));
  }

  void finish() const {
    for (const auto& [key, value] : doc_.items()) {
      if (!seen_.count(key)) fail(key, "is not a recognised field");
    }
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError("config", "field '" + (key.empty() ? path_ : field(key)) + "' " + why);
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string decoder_mode_name(DecoderMode mode) {
  return mode == DecoderMode::kJoint ? "joint" : "frozen-after-warmup";
}

void read_train(Block& b, TrainConfig& t) {
  std::string mode = decoder_mode_name(t.decoder_mode);
  b.read("lambda", t.lambda);
  b.read("temperature", t.temperature);
  b.read("epochs", t.epochs);
  b.read("batch_size", t.batch_size);
  b.read("learning_rate", t.learning_rate);
  b.read("decoder_mode", mode);
  b.read("warmup_epochs", t.warmup_epochs);
  b.read("use_sid", t.use_sid);
  b.read("use_emb", t.use_emb);
  if (mode == "joint") {
    t.decoder_mode = DecoderMode::kJoint;
  } else if (mode == "frozen-after-warmup") {
    t.decoder_mode = DecoderMode::kFrozenAfterWarmup;
  } else {
    b.fail("decoder_mode", "must be 'frozen-after-warmup' or 'joint'");
  }
  if (!(t.lambda >= 0.0)) b.fail("lambda", "must be >= 0");
  if (!(t.temperature > 0.0)) b.fail("temperature", "must be > 0");
  if (t.epochs < 0) b.fail("epochs", "must be >= 0");
  if (t.batch_size < 2) b.fail("batch_size", "must be >= 2");
  if (!(t.learning_rate > 0.0)) b.fail("learning_rate", "must be > 0");
  if (t.warmup_epochs < 0) b.fail("warmup_epochs", "must be >= 0");
}

json train_json(const TrainConfig& t) {
  return {{"lambda", t.lambda},
          {"temperature", t.temperature},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"decoder_mode", decoder_mode_name(t.decoder_mode)},
          {"warmup_epochs", t.warmup_epochs},
          {"use_sid", t.use_sid},
          {"use_emb", t.use_emb}};
}

}  // namespace

void RunConfig::apply_seed(std::uint64_t value) {
  seed = value;
  catalog.seed = value;
  unisid.seed = value;
  rqkmeans.stage1.seed = value;
  rqvae.seed = value;
  eval.users.seed = value;
  eval.next_sid.seed = value;
}

RunConfig run_config_from_json(const json& doc) {
  RunConfig c;
  Block root(doc, "");
  root.read("seed", c.seed);

  {
    Block b = root.child("catalog");
    auto& s = c.catalog;
    b.read("branching", s.branching);
    b.read("visual_dim", s.visual_dim);
    b.read("text_dim", s.text_dim);
    b.read("noise_std", s.noise_std);
    b.read("ambiguity", s.ambiguity);
    b.read("num_items", s.num_items);
    b.read("test_fraction", s.test_fraction);
    b.finish();
    int leaves = 1;
    for (int v : s.branching) {
      if (v <= 0) b.fail("branching", "entries must be positive");
      leaves *= v;
    }
    if (s.visual_dim <= 0) b.fail("visual_dim", "must be positive");
    if (s.text_dim <= 0) b.fail("text_dim", "must be positive");
    if (!(s.noise_std >= 0.0)) b.fail("noise_std", "must be >= 0");
    if (s.num_items < leaves) b.fail("num_items", "must be >= the number of leaves (" + std::to_string(leaves) + ")");
    if (!(s.test_fraction >= 0.0 && s.test_fraction < 1.0)) b.fail("test_fraction", "must lie in [0, 1)");
  }
  {
    Block b = root.child("unisid");
    auto& m = c.unisid.model;
    b.read("levels", m.levels);
    b.read("codebook_size", m.codebook_size);
    b.read("hidden_dim", m.hidden_dim);
    b.read("embedding_dim", m.embedding_dim);
    b.read("recon_dim", m.recon_dim);
    b.read("decoder_hidden", m.decoder_hidden);
    read_train(b, c.unisid);
    b.finish();
    if (m.levels != kCategoryLevels) b.fail("levels", "must equal the taxonomy depth (3)");
    if (m.codebook_size < 2) b.fail("codebook_size", "must be >= 2");
    if (m.hidden_dim <= 0) b.fail("hidden_dim", "must be positive");
    if (m.embedding_dim <= 0) b.fail("embedding_dim", "must be positive");
    if (m.recon_dim <= 0) b.fail("recon_dim", "must be positive");
    if (m.decoder_hidden <= 0) b.fail("decoder_hidden", "must be positive");
  }
  {
    Block b = root.child("rqkmeans");
    auto& r = c.rqkmeans;
    b.read("levels", r.levels);
    b.read("codebook_size", r.codebook_size);
    b.read("iterations", r.iterations);
    Block s = b.child("stage1");
    r.stage1 = c.unisid;
    s.read("epochs", r.stage1.epochs);
    s.read("batch_size", r.stage1.batch_size);
    s.read("learning_rate", r.stage1.learning_rate);
    s.read("temperature", r.stage1.temperature);
    s.finish();
    b.finish();
    if (r.levels < 1) b.fail("levels", "must be >= 1");
    if (r.codebook_size < 1) b.fail("codebook_size", "must be >= 1");
    if (r.iterations < 1) b.fail("iterations", "must be >= 1");
    if (r.stage1.epochs < 0) s.fail("epochs", "must be >= 0");
    if (r.stage1.batch_size < 2) s.fail("batch_size", "must be >= 2");
    if (!(r.stage1.learning_rate > 0.0)) s.fail("learning_rate", "must be > 0");
    if (!(r.stage1.temperature > 0.0)) s.fail("temperature", "must be > 0");
  }
  {
    Block b = root.child("rqvae");
    auto& r = c.rqvae;
    b.read("levels", r.levels);
    b.read("codebook_size", r.codebook_size);
    b.read("latent_dim", r.latent_dim);
    b.read("hidden_dim", r.hidden_dim);
    b.read("beta", r.beta);
    b.read("ema_decay", r.ema_decay);
    b.read("epochs", r.epochs);
    b.read("batch_size", r.batch_size);
    b.read("learning_rate", r.learning_rate);
    b.finish();
    if (r.levels < 1) b.fail("levels", "must be >= 1");
    if (r.codebook_size < 1) b.fail("codebook_size", "must be >= 1");
    if (r.latent_dim <= 0) b.fail("latent_dim", "must be positive");
    if (r.hidden_dim <= 0) b.fail("hidden_dim", "must be positive");
    if (!(r.beta >= 0.0)) b.fail("beta", "must be >= 0");
    if (!(r.ema_decay >= 0.0 && r.ema_decay < 1.0)) b.fail("ema_decay", "must lie in [0, 1)");
    if (r.epochs < 0) b.fail("epochs", "must be >= 0");
    if (r.batch_size < 1) b.fail("batch_size", "must be >= 1");
    if (!(r.learning_rate > 0.0)) b.fail("learning_rate", "must be > 0");
  }
  {
    Block b = root.child("eval");
    auto& e = c.eval;
    b.read("n_users", e.users.n_users);
    b.read("sequence_length", e.users.length);
    b.read("preference", e.users.preference);
    b.read("preferred_nodes", e.users.preferred_nodes);
    b.read("history", e.next_sid.history);
    b.read("token_dim", e.next_sid.dim);
    b.read("hidden_dim", e.next_sid.hidden);
    b.read("epochs", e.next_sid.epochs);
    b.read("batch_size", e.next_sid.batch_size);
    b.read("learning_rate", e.next_sid.learning_rate);
    b.read("k_list", e.k_list);
    b.read("n_neg", e.n_neg);
    b.read("beam_width", e.beam_width);
    b.finish();
    if (e.users.n_users < 1) b.fail("n_users", "must be >= 1");
    if (e.users.length < 2) b.fail("sequence_length", "must be >= 2");
    if (e.users.length >= c.catalog.num_items) b.fail("sequence_length", "must be < catalog.num_items");
    if (!(e.users.preference >= 0.0 && e.users.preference <= 1.0)) b.fail("preference", "must lie in [0, 1]");
    if (e.users.preferred_nodes < 1 || e.users.preferred_nodes > c.catalog.branching[0] * c.catalog.branching[1]) {
      b.fail("preferred_nodes", "must lie in [1, number of level-2 nodes]");
    }
    if (e.next_sid.history < 1) b.fail("history", "must be >= 1");
    if (e.next_sid.dim <= 0) b.fail("token_dim", "must be positive");
    if (e.next_sid.hidden <= 0) b.fail("hidden_dim", "must be positive");
    if (e.next_sid.epochs < 0) b.fail("epochs", "must be >= 0");
    if (e.next_sid.batch_size < 1) b.fail("batch_size", "must be >= 1");
    if (!(e.next_sid.learning_rate > 0.0)) b.fail("learning_rate", "must be > 0");
    if (e.k_list.empty()) b.fail("k_list", "must not be empty");
    for (int k : e.k_list) {
      if (k < 1) b.fail("k_list", "entries must be >= 1");
    }
    if (e.n_neg < 0 || e.n_neg >= c.catalog.num_items) b.fail("n_neg", "must lie in [0, catalog.num_items)");
    const int max_k = *std::max_element(e.k_list.begin(), e.k_list.end());
    if (e.beam_width != 0 && e.beam_width < max_k) b.fail("beam_width", "must be 0 or >= max(k_list)");
  }
  {
    Block b = root.child("sweep");
    b.read("both_modes", c.sweep.both_modes);
    b.finish();
  }
  {
    Block b = root.child("paths");
    b.read("out", c.paths.out);
    b.read("catalog", c.paths.catalog);
    b.finish();
    if (c.paths.out.empty()) b.fail("out", "must not be empty");
  }
  root.finish();
  c.apply_seed(c.seed);
  return c;
}

json run_config_to_json(const RunConfig& c, bool include_paths) {
  const auto& m = c.unisid.model;
  json unisid = train_json(c.unisid);
  unisid["levels"] = m.levels;
  unisid["codebook_size"] = m.codebook_size;
  unisid["hidden_dim"] = m.hidden_dim;
  unisid["embedding_dim"] = m.embedding_dim;
  unisid["recon_dim"] = m.recon_dim;
  unisid["decoder_hidden"] = m.decoder_hidden;
  const auto& s1 = c.rqkmeans.stage1;
  json doc = {
      {"seed", c.seed},
      {"catalog",
       {{"branching", c.catalog.branching},
        {"visual_dim", c.catalog.visual_dim},
        {"text_dim", c.catalog.text_dim},
        {"noise_std", c.catalog.noise_std},
        {"ambiguity", c.catalog.ambiguity},
        {"num_items", c.catalog.num_items},
        {"test_fraction", c.catalog.test_fraction}}},
      {"unisid", unisid},
      {"rqkmeans",
       {{"levels", c.rqkmeans.levels},
        {"codebook_size", c.rqkmeans.codebook_size},
        {"iterations", c.rqkmeans.iterations},
        {"stage1",
         {{"epochs", s1.epochs},
          {"batch_size", s1.batch_size},
          {"learning_rate", s1.learning_rate},
          {"temperature", s1.temperature}}}}},
      {"rqvae",
       {{"levels", c.rqvae.levels},
        {"codebook_size", c.rqvae.codebook_size},
        {"latent_dim", c.rqvae.latent_dim},
        {"hidden_dim", c.rqvae.hidden_dim},
        {"beta", c.rqvae.beta},
        {"ema_decay", c.rqvae.ema_decay},
        {"epochs", c.rqvae.epochs},
        {"batch_size", c.rqvae.batch_size},
        {"learning_rate", c.rqvae.learning_rate}}},
      {"eval",
       {{"n_users", c.eval.users.n_users},
        {"sequence_length", c.eval.users.length},
        {"preference", c.eval.users.preference},
        {"preferred_nodes", c.eval.users.preferred_nodes},
        {"history", c.eval.next_sid.history},
        {"token_dim", c.eval.next_sid.dim},
        {"hidden_dim", c.eval.next_sid.hidden},
        {"epochs", c.eval.next_sid.epochs},
        {"batch_size", c.eval.next_sid.batch_size},
        {"learning_rate", c.eval.next_sid.learning_rate},
        {"k_list", c.eval.k_list},
        {"n_neg", c.eval.n_neg},
        {"beam_width", c.eval.beam_width}}},
      {"sweep", {{"both_modes", c.sweep.both_modes}}},
  };
  if (include_paths) doc["paths"] = {{"out", c.paths.out}, {"catalog", c.paths.catalog}};
  return doc;
}

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char b : bytes) {
    h ^= b;
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string config_digest(const RunConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(run_config_to_json(config, false).dump())));
  return buf;
}

RunConfig load_run_config(const std::filesystem::path& path, std::optional<std::uint64_t> seed_override) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config", "cannot open config file " + path.string());
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw ConfigError("config", "config file is not valid JSON: " + std::string(e.what()));
    }
  }
  RunConfig config = run_config_from_json(doc);
  if (seed_override) config.apply_seed(*seed_override);
  return config;
}

}  // namespace sidforge
