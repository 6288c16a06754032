#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "vtr/checkpoint.hpp"
#include "vtr/config.hpp"
#include "vtr/data_synth.hpp"
#include "vtr/errors.hpp"
#include "vtr/experiments.hpp"
#include "vtr/gradient_suite.hpp"
#include "vtr/retrieval.hpp"
#include "vtr/trainer.hpp"

namespace fs = std::filesystem;
using namespace vtr;

namespace {

constexpr int kUsage = 2;
constexpr int kRuntime = 1;

struct CommonArgs {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool out_required) {
  cmd->add_option("--config", args.config_file, "section.key = value file")->check(CLI::ExistingFile);
  cmd->add_option("--set", args.sets, "override one key, e.g. --set train.lr=1e-4");
  cmd->add_option("--seed", args.seed, "run seed");
  auto* out = cmd->add_option("--out", args.out, "output directory");
  if (out_required) out->required();
}

// defaults < config file < --set < dedicated flags
RunConfig build_config(const CommonArgs& args, RunConfig base) {
  RunConfig c = args.config_file.empty() ? std::move(base) : load_run_config(args.config_file, std::move(base));
  for (const auto& kv : args.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + kv + "'");
    c.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed) c.seed = *args.seed;
  if (!args.out.empty()) c.out = args.out;
  return c;
}

void print_config(const RunConfig& c) {
  std::cout << "# effective config\n" << format_key_values(c.entries()) << std::flush;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

// MANIFEST lists every file a command wrote under --out. Entries from an
// earlier command on the same directory are kept.
void write_manifest(const fs::path& dir, const std::vector<std::string>& files) {
  std::set<std::string> all(files.begin(), files.end());
  const fs::path path = dir / "MANIFEST";
  if (std::ifstream in(path); in) {
    for (std::string line; std::getline(in, line);) {
      if (!line.empty()) all.insert(line);
    }
  }
  all.insert("MANIFEST");
  std::string text;
  for (const auto& f : all) text += f + "\n";
  write_text(path, text);
}

void save_effective_config(const RunConfig& c, const std::string& name, std::vector<std::string>& produced) {
  write_text(c.out / name, format_key_values(c.entries()));
  produced.push_back(name);
}

std::string split_manifest(const DataConfig& data, const std::string& split) {
  if (split == "train") return data.train;
  if (split == "val") return data.val;
  if (split == "test") return data.test;
  if (split == "images") return data.images;
  throw ConfigError("unknown split '" + split + "' (expected train, val, test or images)");
}

// ---- gen

struct GenArgs {
  CommonArgs common;
};

int cmd_gen(const GenArgs& a) {
  RunConfig c = build_config(a.common, RunConfig{});
  if (a.common.seed) c.data.synth.seed = *a.common.seed;
  c.data.dir = c.out;
  c.validate();
  print_config(c);
  ensure_dir(c.out);
  const SyntheticCorpus corpus = generate_synthetic(c.data.synth);
  write_manifest(c.out, write_corpus(corpus, c.out));
  std::cout << "wrote " << corpus.train.size() << " train, " << corpus.val.size() << " val, " << corpus.test.size()
            << " test clips and " << corpus.images.size() << " images to " << c.out.string() << "\n";
  return 0;
}

// ---- train

struct TrainArgs {
  CommonArgs common;
  std::string data;
  std::string schedule;
  std::optional<std::size_t> frames;
  std::string expansion;
  std::string attention_style;
  bool joint = false;
  std::string resume;
  std::optional<std::uint64_t> max_steps;
};

int cmd_train(const TrainArgs& a) {
  RunConfig c = build_config(a.common, RunConfig{});
  if (!a.data.empty()) c.data.dir = a.data;
  if (!a.schedule.empty() && a.frames) throw ConfigError("--schedule and --frames are mutually exclusive");
  if (!a.schedule.empty()) c.schedule.stages = a.schedule;
  if (a.frames) c.schedule.stages = std::to_string(*a.frames);
  if (!a.expansion.empty()) c.schedule.expansion = parse_expansion_method(a.expansion);
  if (!a.attention_style.empty()) c.model.video.attention_style = parse_attention_style(a.attention_style);
  if (a.joint) c.schedule.joint = true;
  if (c.data.dir.empty()) throw ConfigError("train needs a corpus: pass --data or set data.dir");
  c.validate();

  const TrainingData data = load_training_data(c.data, c.schedule.joint, c.train.eval_every_epochs > 0);
  if (c.model.text.vocab_size == 0) c.model.text.vocab_size = data.vocab.size();
  if (c.model.text.vocab_size != data.vocab.size()) {
    throw ConfigError("text.vocab_size is " + std::to_string(c.model.text.vocab_size) + " but the corpus has " +
                      std::to_string(data.vocab.size()) + " tokens");
  }
  c.validate();
  print_config(c);
  ensure_dir(c.out);

  const CurriculumSchedule schedule = c.curriculum();
  std::optional<Checkpoint> ckpt;
  std::size_t initial_frames = schedule.stages.front().frames;
  if (!a.resume.empty()) {
    ckpt = load_checkpoint(a.resume);
    initial_frames = checkpoint_frame_capacity(*ckpt);
  }
  RetrievalModel model(c.model, initial_frames, c.seed);
  TrainerOptions options = trainer_options(c);
  options.echo = &std::cout;
  Trainer trainer(model, data, options);
  if (ckpt) {
    trainer.resume(*ckpt);
    std::cout << "resumed from " << a.resume << " at step " << trainer.global_step() << "\n";
  }
  trainer.run(a.max_steps.value_or(UINT64_MAX));

  std::vector<std::string> produced = trainer.produced();
  save_effective_config(c, "train.conf", produced);
  if (!trainer.done()) {
    const std::string name = "step" + std::to_string(trainer.global_step()) + ".ckpt";
    save_checkpoint(c.out / name, trainer.checkpoint());
    produced.push_back(name);
  }
  write_manifest(c.out, produced);
  std::cout << "trained to step " << trainer.global_step() << " of " << schedule.total_steps()
            << ", patch tokens " << trainer.ledger().total() << "\n";
  return 0;
}

// ---- eval / embed

struct EvalArgs {
  CommonArgs common;
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  std::optional<std::size_t> frames;
  std::optional<std::size_t> stride;
  std::string direction;
  bool paragraph = false;
  bool zero_shot = false;
};

RunConfig eval_config(const EvalArgs& a) {
  RunConfig c = build_config(a.common, RunConfig{});
  if (!a.data.empty()) c.data.dir = a.data;
  if (c.data.dir.empty()) throw ConfigError("a gallery is needed: pass --data or set data.dir");
  if (a.frames) c.eval.frames = *a.frames;
  if (a.stride) c.eval.stride = *a.stride;
  if (!a.direction.empty()) c.eval.direction = parse_eval_direction(a.direction);
  if (a.paragraph) c.eval.paragraph = true;
  return c;
}

void check_capacity(const Checkpoint& ckpt, std::size_t frames) {
  const std::size_t capacity = checkpoint_frame_capacity(ckpt);
  if (frames > capacity) {
    throw CapacityError("evaluation asks for " + std::to_string(frames) + " frames but the checkpoint's temporal table covers " +
                        std::to_string(capacity));
  }
}

int cmd_eval(const EvalArgs& a) {
  RunConfig c = eval_config(a);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  // The model section comes from the checkpoint.
  c.model = ckpt.model;
  c.validate();
  check_capacity(ckpt, c.eval.frames);
  print_config(c);
  ensure_dir(c.out);

  const auto gallery = load_samples(c.data.path(split_manifest(c.data, a.split)));
  const EvalOptions options = eval_options(c.eval, c.seed);
  std::vector<RetrievalReport> reports;
  if (a.zero_shot) {
    reports = zero_shot_evaluate(ckpt, gallery, options, c.eval.direction);
  } else {
    RetrievalModel model = model_from_checkpoint(ckpt);
    reports = evaluate(model, gallery, vocab_from_checkpoint(ckpt), options, c.eval.direction);
  }
  const std::string table = format_report_table(reports);
  std::cout << table;
  std::string jsonl;
  for (const auto& r : reports) {
    std::cout << "encoder calls " << to_string(r.direction) << ": " << r.encoder_calls << " = t " << r.texts
              << " + v " << r.videos << " x passes " << r.passes << "; similarity entries " << r.texts * r.videos
              << "\n";
    jsonl += report_json(r) + "\n";
  }
  std::vector<std::string> produced;
  write_text(c.out / "reports.jsonl", jsonl);
  write_text(c.out / "report.txt", table);
  produced.insert(produced.end(), {"reports.jsonl", "report.txt"});
  save_effective_config(c, "eval.conf", produced);
  write_manifest(c.out, produced);
  return 0;
}

int cmd_embed(const EvalArgs& a) {
  RunConfig c = eval_config(a);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  c.model = ckpt.model;
  c.validate();
  check_capacity(ckpt, c.eval.frames);
  print_config(c);
  ensure_dir(c.out);

  const auto gallery = load_samples(c.data.path(split_manifest(c.data, a.split)));
  const EvalOptions options = eval_options(c.eval, c.seed);
  RetrievalModel model = model_from_checkpoint(ckpt);
  const auto captions = gallery_captions(gallery, options);
  const GalleryEmbeddings g = embed_gallery(model, gallery, captions, vocab_from_checkpoint(ckpt), options);

  auto rows = [](const Tensor& m, std::size_t i) {
    std::vector<double> v(m.dim(1));
    for (std::size_t k = 0; k < v.size(); ++k) v[k] = m.at(i, k);
    return v;
  };
  std::string texts, videos;
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    nlohmann::ordered_json t{{"id", gallery[i].record.id}, {"caption", captions[i]}, {"embedding", rows(g.texts, i)}};
    nlohmann::ordered_json v{{"id", gallery[i].record.id}, {"embedding", rows(g.videos, i)}};
    texts += t.dump() + "\n";
    videos += v.dump() + "\n";
  }
  std::vector<std::string> produced{"text_embeddings.jsonl", "video_embeddings.jsonl"};
  write_text(c.out / produced[0], texts);
  write_text(c.out / produced[1], videos);
  save_effective_config(c, "embed.conf", produced);
  write_manifest(c.out, produced);
  std::cout << "embedded " << gallery.size() << " captions and " << gallery.size() << " clips (" << g.calls.text
            << " text + " << g.calls.video << " video encoder calls)\n";
  return 0;
}

// ---- gradcheck

struct GradArgs {
  std::optional<double> tol;
  std::string op;
  std::uint64_t seed = 1;
  std::string out;
};

void print_report(const std::string& title, const GradCheckReport& r) {
  std::printf("%s\n", title.c_str());
  for (const auto& e : r.entries) {
    std::printf("  %-34s %6zu  max rel %.3e\n", e.name.c_str(), e.elements, e.max_rel_error);
  }
}

int cmd_gradcheck(const GradArgs& a) {
  nlohmann::ordered_json out;
  bool passed = true;
  if (a.op.empty()) {
    ModelGradCheckConfig config;
    config.seed = a.seed;
    if (a.tol) config.options.tol = *a.tol;
    std::printf("# full-model check: D=%zu blocks=%zu heads=%zu M=%zu N=%zu D_text=%zu B=%zu\n",
                config.model.video.embed_dim, config.model.video.blocks, config.model.video.heads, config.frames,
                config.model.video.patches_per_frame(), config.model.text.embed_dim, config.batch);
    std::printf("# h=%g tol=%g floor=%g perturb_std=%g seed=%llu\n", config.options.h, config.options.tol,
                config.options.floor, config.perturb_std, static_cast<unsigned long long>(config.seed));
    const GradCheckReport r = model_gradcheck(config);
    print_report("model", r);
    std::printf("max relative error %.3e (tol %.1e): %s\n", r.max_rel_error, r.tolerance,
                r.passed ? "PASS" : "FAIL");
    passed = r.passed;
    out["model"] = {{"max_rel_error", r.max_rel_error}, {"tol", r.tolerance}, {"passed", r.passed}};
  } else {
    const auto names = a.op == "all" ? gradcheck_op_names() : std::vector<std::string>{a.op};
    for (const auto& name : names) {
      GradCheckOptions options{1e-3, 1e-6, 1e-8, Stencil::kFivePoint};
      if (a.tol) options.tol = *a.tol;
      const GradCheckReport r = op_gradcheck(name, a.seed, options);
      std::printf("%-16s max rel %.3e (tol %.1e): %s\n", name.c_str(), r.max_rel_error, r.tolerance,
                  r.passed ? "PASS" : "FAIL");
      passed = passed && r.passed;
      out[name] = {{"max_rel_error", r.max_rel_error}, {"tol", r.tolerance}, {"passed", r.passed}};
    }
  }
  if (!a.out.empty()) {
    ensure_dir(a.out);
    write_text(fs::path(a.out) / "gradcheck.json", out.dump(2) + "\n");
    write_manifest(a.out, {"gradcheck.json"});
  }
  return passed ? 0 : kRuntime;
}

// ---- ablate

struct AblateArgs {
  CommonArgs common;
  std::vector<std::string> names;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
};

int cmd_ablate(const AblateArgs& a) {
  RunConfig c = build_config(a.common, desk_profile());
  c.validate();
  print_config(c);
  ensure_dir(c.out);
  const auto names = a.names.empty() ? ablation_names() : a.names;
  for (const auto& n : names) ablation_arms(n);  // reject unknown names before training anything

  ExperimentRunner runner(c);
  runner.verbose = true;
  std::string jsonl, summary;
  for (const auto& n : names) {
    std::vector<ArmSummary> summaries;
    std::cerr << n << "\n";
    for (const auto& arm : ablation_arms(n)) {
      summaries.push_back(runner.run_seeds(arm, a.seeds));
      for (const auto& r : summaries.back().runs) {
        auto j = nlohmann::ordered_json::parse(arm_result_json(r));
        j["ablation"] = n;
        jsonl += j.dump() + "\n";
      }
    }
    summary += "== " + n + "\n" + summary_table(summaries);
  }
  std::cout << summary;
  write_text(c.out / "results.jsonl", jsonl);
  write_text(c.out / "summary.txt", summary);
  std::vector<std::string> produced{"results.jsonl", "summary.txt"};
  save_effective_config(c, "ablate.conf", produced);
  write_manifest(c.out, produced);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"video-text retrieval toolkit"};
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate the synthetic corpus");
  add_common(gen_cmd, gen.common, true);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd, train.common, true);
  train_cmd->add_option("--data", train.data, "corpus directory");
  train_cmd->add_option("--schedule", train.schedule, "stages, e.g. 1x96:500,4x24:500");
  train_cmd->add_option("--frames", train.frames, "single stage with this many frames");
  train_cmd->add_option("--expansion", train.expansion, "zero_pad | nearest | bilinear");
  train_cmd->add_option("--attention-style", train.attention_style, "frozen | original");
  train_cmd->add_flag("--joint", train.joint, "alternate image and video batches");
  train_cmd->add_option("--resume", train.resume, "checkpoint to continue from")->check(CLI::ExistingFile);
  train_cmd->add_option("--max-steps", train.max_steps, "stop after this many steps in this invocation");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "retrieval metrics for a checkpoint");
  EvalArgs embed;
  auto* embed_cmd = app.add_subcommand("embed", "export gallery embeddings");
  for (auto [cmd, args] : {std::pair{eval_cmd, &eval}, std::pair{embed_cmd, &embed}}) {
    add_common(cmd, args->common, true);
    cmd->add_option("--checkpoint", args->checkpoint, "checkpoint file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--data", args->data, "corpus directory");
    cmd->add_option("--split", args->split, "train | val | test | images");
    cmd->add_option("--frames", args->frames, "frames per test pass");
    cmd->add_option("--stride", args->stride, "offset between test passes");
    cmd->add_flag("--paragraph", args->paragraph, "concatenate captions per query");
  }
  eval_cmd->add_option("--direction", eval.direction, "t2v | v2t | both");
  eval_cmd->add_flag("--zero-shot", eval.zero_shot, "label the run as zero-shot");

  GradArgs grad;
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  grad_cmd->add_option("--tol", grad.tol, "maximum relative error");
  grad_cmd->add_option("--op", grad.op, "check one op in isolation, or 'all'");
  grad_cmd->add_option("--seed", grad.seed, "seed");
  grad_cmd->add_option("--out", grad.out, "output directory");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "multi-seed ablation recipes on the desk profile");
  add_common(ablate_cmd, ablate.common, true);
  ablate_cmd->add_option("--name", ablate.names, "frames | curriculum | expansion | expansion-from-1 | attention");
  ablate_cmd->add_option("--seeds", ablate.seeds, "comma-separated seeds")->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*gen_cmd) return cmd_gen(gen);
    if (*train_cmd) return cmd_train(train);
    if (*eval_cmd) return cmd_eval(eval);
    if (*embed_cmd) return cmd_embed(embed);
    if (*grad_cmd) return cmd_gradcheck(grad);
    if (*ablate_cmd) return cmd_ablate(ablate);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kUsage;
  } catch (const CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << "\n";
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntime;
  }
  return kUsage;
}
