// aar: data generation, training, evaluation, scale ablation and GradCAM.
// Exit codes: 0 ok, 2 numerical abort, 3 usage or configuration error.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "aar/ablate.hpp"
#include "aar/checkpoint.hpp"
#include "aar/config.hpp"
#include "aar/explain.hpp"

namespace fs = std::filesystem;
using namespace aar;

namespace {

constexpr int kExitNumerical = 2;
constexpr int kExitConfig = 3;

/// Flag values that override the config file when given.
struct TrainOverrides {
  std::optional<std::string> mode, split;
  std::optional<std::size_t> epochs, batch_size, max_steps, val_every;
  std::optional<double> lr, lambda_neg, s03, baseline_scale;
  std::optional<std::uint64_t> seed;

  void add_to(CLI::App* app) {
    app->add_option("--mode", mode, "aar | baseline_arcface_00");
    app->add_option("--split", split, "close | open");
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--max-steps", max_steps, "stop after N optimizer steps");
    app->add_option("--val-every", val_every, "validation interval in epochs (0 = off)");
    app->add_option("--lr", lr);
    app->add_option("--lambda-neg", lambda_neg);
    app->add_option("--s03", s03, "enlargement of the second crop");
    app->add_option("--baseline-scale", baseline_scale, "enlargement of the baseline's crop");
    app->add_option("--seed", seed, "training seed");
  }

  void apply(trainer::TrainConfig& t) const {
    if (mode) t.mode = model::parse_mode(*mode);
    if (split) t.split = *split;
    if (epochs) t.epochs = *epochs;
    if (batch_size) t.batch_size = *batch_size;
    if (max_steps) t.max_steps = *max_steps;
    if (val_every) t.val_every = *val_every;
    if (lr) t.lr = *lr;
    if (lambda_neg) t.lambda_neg = *lambda_neg;
    if (s03) t.s03 = *s03;
    if (baseline_scale) t.baseline_scale = *baseline_scale;
    if (seed) t.seed = *seed;
    t.validate();
  }
};

config::RunConfig load_config(const std::string& path) {
  return path.empty() ? config::RunConfig{} : config::load_run_config(path);
}

void print_hash(const char* what, std::uint64_t h) { std::cerr << what << ' ' << hex64(h) << '\n'; }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  if (out.empty()) throw ConfigError("empty list '" + s + "'");
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& s) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    std::istringstream is(item);
    T v;
    if (!(is >> v) || !is.eof()) throw ConfigError("cannot parse list item '" + item + "'");
    out.push_back(v);
  }
  return out;
}

// ---- gen-data ----

struct GenArgs {
  std::string config, out;
  bool distractors = false, force = false;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;
};

int cmd_gen_data(const GenArgs& a) {
  auto rc = load_config(a.config);
  if (a.seed) rc.datagen.seed = *a.seed;
  rc.datagen.validate();
  rc.datagen_given = true;
  print_hash("config_hash", config::config_hash(rc));
  const fs::path out(a.out);
  if (fs::exists(out) && !fs::is_directory(out)) throw ConfigError("output path " + a.out + " is not a directory");
  if (fs::exists(out) && !fs::is_empty(out)) {
    if (!a.force) throw ConfigError("output directory " + a.out + " is not empty (use --force to overwrite)");
    fs::remove_all(out);
  }
  const unsigned threads = a.threads ? a.threads : std::max(1u, std::thread::hardware_concurrency());
  auto ds = datagen::generate_dataset(rc.datagen, rc.datagen.seed, threads);
  if (a.distractors) datagen::add_distractors(ds, threads);
  datagen::write_dataset(out, ds);
  const auto& m = ds.manifest;
  std::printf("datagen_hash %s\n", hex64(datagen::datagen_hash(m.config)).c_str());
  for (const char* s : {"train", "val", "test"})
    std::printf("%-10s scenes %4zu objects %5zu\n", s, m.split(s).size(), datagen::object_count(m.split(s)));
  if (m.has_distractors)
    std::printf("%-10s scenes %4zu objects %5zu\n", "distractor", m.distractor.size(), datagen::object_count(m.distractor));
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string config, data, out, loss_csv, resume;
  TrainOverrides over;
  unsigned threads = 0;
};

int cmd_train(const TrainArgs& a) {
  auto rc = load_config(a.config);
  a.over.apply(rc.train);
  rc.train.threads = a.threads;
  const auto manifest = datagen::load_manifest(a.data);
  config::bind_manifest(rc, manifest);
  const std::uint64_t hash = config::config_hash(rc);
  print_hash("config_hash", hash);

  pairs::ImageStore store{fs::path(a.data)};
  const auto mc = config::model_config(rc, 2);
  trainer::TrainHooks hooks;
  hooks.on_epoch = [](std::size_t epoch, double mean) { std::fprintf(stderr, "epoch %zu mean l_aar %.6f\n", epoch, mean); };
  hooks.on_val = [](const trainer::ValLog& v) { std::fprintf(stderr, "epoch %zu val mAP@1 %.4f\n", v.epoch, v.map1); };
  std::optional<checkpoint::Checkpoint> from;
  if (!a.resume.empty()) {
    from = checkpoint::load_checkpoint(a.resume);
    auto stored = config::run_config_from_json(from->config);
    config::bind_manifest(stored, manifest);
    // the run may extend epochs or max_steps; everything else must match
    stored.train.epochs = rc.train.epochs;
    stored.train.max_steps = rc.train.max_steps;
    stored.train.threads = rc.train.threads;
    if (config::to_json(stored) != config::to_json(rc))
      throw IncompatibleError("resume: checkpoint config differs beyond epochs / max_steps");
  }
  const auto res = trainer::train(rc.train, mc, rc.augment, manifest, store, hooks, from ? &from->state : nullptr);

  checkpoint::save_checkpoint(a.out, {hash, config::to_json(rc), res.state});
  const std::string loss_csv = a.loss_csv.empty() ? a.out + ".loss.csv" : a.loss_csv;
  trainer::write_loss_csv(loss_csv, res.steps);
  if (!res.val.empty()) trainer::write_val_csv(a.out + ".val.csv", res.val);
  std::printf("steps %zu epochs %zu seconds %.1f\n", res.state.step, res.state.epoch, res.seconds);
  std::printf("checkpoint %s\nloss_csv %s\n", a.out.c_str(), loss_csv.c_str());
  return 0;
}

/// Checkpoint plus the configuration and network it was trained with.
struct Loaded {
  checkpoint::Checkpoint ck;
  config::RunConfig rc;
  model::ModelConfig mc;
};

Loaded load_trained(const std::string& ckpt, const datagen::Manifest& manifest) {
  Loaded l;
  l.ck = checkpoint::load_checkpoint(ckpt);
  l.rc = config::run_config_from_json(l.ck.config);
  config::bind_manifest(l.rc, manifest);
  l.mc = config::model_config(l.rc, l.ck.state.train_classes.size());
  return l;
}

// ---- eval ----

struct EvalArgs {
  std::string ckpt, data, csv, dump;
  std::optional<int> protocol;
  std::optional<std::string> split;
  std::optional<std::size_t> dump_topk;
  unsigned threads = 0;
};

int cmd_eval(const EvalArgs& a) {
  const auto manifest = datagen::load_manifest(a.data);
  auto l = load_trained(a.ckpt, manifest);
  auto& ev = l.rc.eval;
  if (a.protocol) ev.protocol = *a.protocol;
  if (a.split) ev.split = *a.split;
  if (a.dump_topk) ev.dump_topk = *a.dump_topk;
  ev.validate();
  const std::uint64_t hash = config::config_hash(l.rc);
  print_hash("config_hash", hash);
  print_hash("checkpoint_hash", l.ck.config_hash);

  pairs::ImageStore store{fs::path(a.data)};
  const unsigned threads = a.threads ? a.threads : std::max(1u, std::thread::hardware_concurrency());
  const auto reports = retrieval::run_protocols(l.ck.state.params, l.mc, manifest, store, ev.split, l.rc.train.seed,
                                                l.rc.train.pair_scale(), {ev.protocol}, threads,
                                                std::max<std::size_t>(5, ev.dump_topk));
  const auto& rep = reports.at(ev.protocol);
  json j = rep.to_json();
  j["config_hash"] = hex64(hash);
  j["checkpoint_hash"] = hex64(l.ck.config_hash);
  j["mode"] = model::to_string(l.mc.mode);
  std::cout << j.dump(1) << '\n';

  const std::string csv = a.csv.empty() ? a.ckpt + ".eval_p" + std::to_string(ev.protocol) + "_" + ev.split + ".csv" : a.csv;
  {
    std::ofstream os(csv, std::ios::binary);
    if (!os) throw IoError("cannot write " + csv);
    os << retrieval::EvalReport::csv_header() << '\n' << rep.csv_row() << '\n';
  }
  if (ev.dump_topk) {
    const std::string dump = a.dump.empty() ? csv + ".top" + std::to_string(ev.dump_topk) + ".txt" : a.dump;
    std::ofstream os(dump, std::ios::binary);
    if (!os) throw IoError("cannot write " + dump);
    for (const auto& q : rep.per_query) {
      os << q.uid << ':';
      for (std::size_t i = 0; i < std::min(ev.dump_topk, q.top.size()); ++i) os << ' ' << q.top[i];
      os << '\n';
    }
    std::cerr << "topk_dump " << dump << '\n';
  }
  std::cerr << "eval_csv " << csv << '\n';
  return 0;
}

// ---- ablate ----

struct AblateArgs {
  std::string config, data, out, scales = "0,0.1,0.3,0.5,1", seeds = "1", protocols = "1,2";
  TrainOverrides over;
  unsigned threads = 0;
};

int cmd_ablate(const AblateArgs& a) {
  auto rc = load_config(a.config);
  a.over.apply(rc.train);
  rc.train.threads = a.threads;
  const auto manifest = datagen::load_manifest(a.data);
  config::bind_manifest(rc, manifest);
  print_hash("config_hash", config::config_hash(rc));
  const auto scales = parse_list<double>(a.scales);
  const auto seeds = parse_list<std::uint64_t>(a.seeds);
  const auto protocols = parse_list<int>(a.protocols);
  for (int p : protocols)
    if (p != 1 && p != 2) throw ConfigError("unknown protocol " + std::to_string(p));
  if (std::count(protocols.begin(), protocols.end(), 2) && !manifest.has_distractors)
    throw ConfigError("protocol 2 requires a distractor manifest (gen-data --distractors)");

  std::ofstream os;
  if (!a.out.empty()) {
    os.open(a.out, std::ios::binary);
    if (!os) throw IoError("cannot write " + a.out);
    os << ablation::kSweepHeader << '\n';
  }
  std::cout << ablation::kSweepHeader << '\n';
  pairs::ImageStore store{fs::path(a.data)};
  ablation::ablate_scales(rc, manifest, store, scales, seeds, protocols, [&](const ablation::SweepRow& r) {
    std::cout << ablation::csv_row(r) << std::endl;
    if (os.is_open()) os << ablation::csv_row(r) << '\n' << std::flush;
  });
  return 0;
}

// ---- explain ----

struct ExplainArgs {
  std::string ckpt, data, out;
  std::uint64_t uid = 0;
  unsigned threads = 0;
};

int cmd_explain(const ExplainArgs& a) {
  const auto manifest = datagen::load_manifest(a.data);
  const auto l = load_trained(a.ckpt, manifest);
  print_hash("config_hash", config::config_hash(l.rc));
  if (l.mc.mode != model::Mode::aar) throw ConfigError("explain needs an aar-mode checkpoint");

  const auto objects = retrieval::all_main_objects(manifest);
  const auto it = std::find_if(objects.begin(), objects.end(), [&](const auto& o) { return o.uid == a.uid; });
  if (it == objects.end()) throw ConfigError("unknown object uid " + std::to_string(a.uid));

  pairs::ImageStore store{fs::path(a.data)};
  const unsigned threads = a.threads ? a.threads : std::max(1u, std::thread::hardware_concurrency());
  const double scale = l.rc.train.pair_scale();
  const auto so = retrieval::split_objects(manifest, l.rc.train.split, l.rc.train.seed);
  const auto gallery = retrieval::build_gallery(l.ck.state.params, l.mc, pairs::make_pairs(store, so.gallery, scale, threads), threads);
  const auto pair = pairs::make_pair(store, *it, scale);
  const auto e = model::embed(pair.crop00, pair.crop03, l.ck.state.params, l.mc);
  const std::size_t best = explain::best_match(e, gallery, pair.uid);
  const numeric::Tensor target({gallery.dim}, std::vector<float>(gallery.row(best), gallery.row(best) + gallery.dim));
  const auto set = explain::gradcam(l.ck.state.params, l.mc, pair, target);
  const auto files = explain::write_overlays(a.out, pair, set);
  std::printf("uid %llu class %d best_match %llu (class %d) score %.6f\n", static_cast<unsigned long long>(pair.uid),
              pair.class_id, static_cast<unsigned long long>(gallery.uids[best]), gallery.labels[best], set.score);
  for (const auto& f : files) std::printf("%s\n", f.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial attention representation: logo metric learning at desk scale"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* g = app.add_subcommand("gen-data", "generate a synthetic logo dataset");
  g->add_option("--config", gen.config, "run config JSON");
  g->add_option("--out", gen.out, "output directory")->required();
  g->add_flag("--distractors", gen.distractors, "also render the distractor set");
  g->add_flag("--force", gen.force, "replace a non-empty output directory");
  g->add_option("--seed", gen.seed, "generator seed");
  g->add_option("--threads", gen.threads);

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "train a model and write a checkpoint");
  t->add_option("--config", tr.config, "run config JSON");
  t->add_option("--data", tr.data, "dataset directory")->required();
  t->add_option("--out", tr.out, "checkpoint path")->required();
  t->add_option("--loss-csv", tr.loss_csv, "per-step loss log (default <out>.loss.csv)");
  t->add_option("--resume", tr.resume, "continue from a checkpoint");
  t->add_option("--threads", tr.threads);
  tr.over.add_to(t);

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "retrieval mAP of a checkpoint");
  e->add_option("--ckpt", ev.ckpt)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--protocol", ev.protocol, "1 = no distractors, 2 = distractors in the gallery");
  e->add_option("--split", ev.split, "close | open");
  e->add_option("--dump-topk", ev.dump_topk, "write the top-N gallery uids per query");
  e->add_option("--csv", ev.csv, "report CSV path");
  e->add_option("--dump", ev.dump, "top-N dump path");
  e->add_option("--threads", ev.threads);

  AblateArgs ab;
  auto* b = app.add_subcommand("ablate", "train and evaluate both modes across enlargement scales");
  b->add_option("--config", ab.config, "run config JSON");
  b->add_option("--data", ab.data)->required();
  b->add_option("--scales", ab.scales, "comma-separated scales");
  b->add_option("--seeds", ab.seeds, "comma-separated seeds");
  b->add_option("--protocols", ab.protocols, "comma-separated protocols");
  b->add_option("--out", ab.out, "sweep CSV path");
  b->add_option("--threads", ab.threads);
  ab.over.add_to(b);

  ExplainArgs ex;
  auto* x = app.add_subcommand("explain", "GradCAM overlays for one object");
  x->add_option("--ckpt", ex.ckpt)->required();
  x->add_option("--data", ex.data)->required();
  x->add_option("--uid", ex.uid)->required();
  x->add_option("--out", ex.out)->required();
  x->add_option("--threads", ex.threads);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& h) {
    return app.exit(h);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kExitConfig;
  }

  try {
    if (*g) return cmd_gen_data(gen);
    if (*t) return cmd_train(tr);
    if (*e) return cmd_eval(ev);
    if (*b) return cmd_ablate(ab);
    if (*x) return cmd_explain(ex);
  } catch (const NumericalAbort& err) {
    std::cerr << "numerical abort: " << err.what() << '\n';
    return kExitNumerical;
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const IoError& err) {
    std::cerr << "i/o error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const IncompatibleError& err) {
    std::cerr << "incompatible: " << err.what() << '\n';
    return kExitConfig;
  } catch (const IntegrityError& err) {
    std::cerr << "integrity error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return kExitConfig;
}
