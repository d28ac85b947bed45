#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "kd/distill.hpp"
#include "kd/quant.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// option bundles

struct DataOpts {
  std::string data_dir;  // PNG directory; empty selects in-memory synthesis
  std::int64_t classes = 8;
  std::int64_t per_class = 300;
  std::int64_t size = 64;
  std::string tier = "hard";

  void add(CLI::App* cmd) {
    cmd->add_option("--data", data_dir, "dataset directory (PNG layout); omit to synthesize");
    cmd->add_option("--classes", classes, "number of classes for synthesis");
    cmd->add_option("--per-class", per_class, "images per class for synthesis");
    cmd->add_option("--size", size, "square image size");
    cmd->add_option("--tier", tier, "difficulty tier: easy | hard");
  }

  kd::data::Dataset load(std::uint64_t seed) const {
    if (!data_dir.empty()) {
      kd::data::LoadReport rep;
      auto ds = kd::data::load_directory(data_dir, size, seed, &rep);
      if (rep.skipped > 0)
        std::cerr << "warning: skipped " << rep.skipped << " unreadable image file(s)\n";
      return ds;
    }
    kd::data::SyntheticSpec spec;
    spec.n_classes = classes;
    spec.images_per_class = per_class;
    spec.image_size = size;
    spec.tier = kd::data::tier_from_string(tier);
    spec.seed = seed;
    return kd::data::generate(spec);
  }

  json to_json() const {
    return {{"data", data_dir}, {"classes", classes},  {"per_class", per_class},
            {"size", size},     {"tier", tier}};
  }
};

struct TrainOpts {
  double tau = 6.0;
  double alpha = 0.7;
  double beta = 0.3;
  std::int64_t batch = 32;
  std::int64_t epochs = 60;
  double lr = 1e-3;
  double weight_decay = 0.01;
  std::int64_t patience = 8;
  std::int64_t c_common = 32;
  bool no_augment = false;
  bool cache_teacher = false;

  void add(CLI::App* cmd, bool with_distill) {
    if (with_distill) {
      cmd->add_option("--tau", tau, "distillation temperature");
      cmd->add_option("--alpha", alpha, "logit-loss weight");
      cmd->add_option("--beta", beta, "attention-loss weight");
      cmd->add_option("--c-common", c_common, "shared adapter channel count");
      cmd->add_flag("--cache-teacher", cache_teacher,
                    "precompute teacher outputs (forces --no-augment semantics)");
    }
    cmd->add_option("--batch", batch, "batch size");
    cmd->add_option("--epochs", epochs, "max epochs");
    cmd->add_option("--lr", lr, "AdamW learning rate");
    cmd->add_option("--weight-decay", weight_decay, "AdamW weight decay");
    cmd->add_option("--patience", patience, "early-stopping patience (epochs)");
    cmd->add_flag("--no-augment", no_augment, "disable training-time augmentation");
  }

  kd::DistillConfig config(std::uint64_t seed) const {
    kd::DistillConfig cfg;
    cfg.tau = tau;
    cfg.alpha = alpha;
    cfg.beta = beta;
    cfg.batch_size = batch;
    cfg.epochs = epochs;
    cfg.optimizer.lr = lr;
    cfg.optimizer.weight_decay = weight_decay;
    cfg.early_stop_patience = patience;
    cfg.c_common = c_common;
    cfg.seed = seed;
    cfg.augment = !no_augment && !cache_teacher;
    cfg.cache_teacher = cache_teacher;
    return cfg;
  }

  json to_json() const {
    return {{"tau", tau},
            {"alpha", alpha},
            {"beta", beta},
            {"batch", batch},
            {"epochs", epochs},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"patience", patience},
            {"c_common", c_common},
            {"augment", !no_augment && !cache_teacher},
            {"cache_teacher", cache_teacher}};
  }
};

// ---------------------------------------------------------------------------
// helpers

void apply_config_file(CLI::App* cmd, const std::string& path) {
  if (path.empty()) return;
  std::ifstream f(path);
  if (!f) throw kd::ConfigError("cannot read config file " + path);
  json cfg;
  try {
    cfg = json::parse(f);
  } catch (const json::exception& e) {
    throw kd::FormatError("config file " + path + " is not valid JSON: " + e.what());
  }
  for (auto& [key, value] : cfg.items()) {
    CLI::Option* opt = cmd->get_option_no_throw("--" + key);
    if (!opt) throw kd::ConfigError("config file key '" + key + "' is not a known flag");
    if (opt->count() > 0) continue;  // explicit flags win over the config file
    if (value.is_boolean()) {
      if (value.get<bool>()) opt->add_result("true");
    } else {
      opt->add_result(value.is_string() ? value.get<std::string>() : value.dump());
    }
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw kd::DataError("cannot write " + path.string());
  f << text;
}

// provenance record; must exist on disk before any real work starts
void write_run_config(const fs::path& out, const std::string& subcommand, const json& params) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw kd::DataError("cannot create output directory " + out.string());
  json rc = {{"subcommand", subcommand}, {"params", params}};
  write_text(out / "run_config.json", rc.dump(2) + "\n");
}

json epochs_to_json(const kd::TrainReport& rep) {
  json rows = json::array();
  for (const auto& e : rep.epochs)
    rows.push_back({{"epoch", e.epoch},
                    {"loss_total", e.loss_total},
                    {"loss_ce", e.loss_ce},
                    {"loss_logit", e.loss_logit},
                    {"loss_attn", e.loss_attn},
                    {"val_acc", e.val_acc},
                    {"val_f1", e.val_f1}});
  return {{"epochs", rows}, {"best_epoch", rep.best_epoch}, {"best_val_acc", rep.best_val_acc}};
}

json eval_to_json(const kd::metrics::EvalResult& r) {
  return {{"accuracy", r.accuracy},   {"precision_macro", r.precision_macro},
          {"recall_macro", r.recall_macro}, {"f1_macro", r.f1_macro},
          {"auc_macro", r.auc_macro}, {"map_macro", r.map_macro}};
}

std::string teacher_descriptor(const kd::TeacherConfig& c) {
  json d = {{"model", "teacher"},   {"kind", "float32"},
            {"n_classes", c.n_classes}, {"image_size", c.image_size},
            {"patch", c.patch},     {"dim", c.dim},
            {"n_heads", c.n_heads}, {"n_blocks", c.n_blocks},
            {"mlp_hidden", c.mlp_hidden}};
  return d.dump();
}

kd::TeacherModel<float> load_teacher(const std::string& path) {
  if (!fs::exists(path)) throw kd::ConfigError("teacher checkpoint not found: " + path);
  auto ckpt = kd::load_checkpoint(path);
  json d;
  try {
    d = json::parse(ckpt.descriptor);
  } catch (const json::exception&) {
    throw kd::FormatError("checkpoint descriptor is not valid JSON");
  }
  if (d.value("model", "") != "teacher")
    throw kd::FormatError("checkpoint at " + path + " is not a teacher checkpoint");
  kd::TeacherConfig cfg;
  cfg.n_classes = d.at("n_classes").get<std::int64_t>();
  cfg.image_size = d.at("image_size").get<std::int64_t>();
  cfg.patch = d.at("patch").get<std::int64_t>();
  cfg.dim = d.at("dim").get<std::int64_t>();
  cfg.n_heads = d.at("n_heads").get<std::int64_t>();
  cfg.n_blocks = d.at("n_blocks").get<std::int64_t>();
  cfg.mlp_hidden = d.at("mlp_hidden").get<std::int64_t>();
  kd::TeacherModel<float> teacher(cfg, kd::Rng::child(0, "teacher/load"));
  kd::load_params_from_checkpoint(ckpt, teacher.named_parameters());
  teacher.set_frozen(true);
  return teacher;
}

kd::StudentConfig student_config_from_descriptor(const std::string& descriptor) {
  json d;
  try {
    d = json::parse(descriptor);
  } catch (const json::exception&) {
    throw kd::FormatError("checkpoint descriptor is not valid JSON");
  }
  if (d.value("model", "") != "student")
    throw kd::FormatError("checkpoint is not a student checkpoint");
  kd::StudentConfig cfg;
  cfg.n_classes = d.at("n_classes").get<std::int64_t>();
  cfg.image_size = d.at("image_size").get<std::int64_t>();
  cfg.stem_channels = d.at("stem_channels").get<std::int64_t>();
  for (int i = 0; i < 3; ++i) {
    cfg.block_channels[static_cast<std::size_t>(i)] =
        d.at("block_channels")[static_cast<std::size_t>(i)].get<std::int64_t>();
    cfg.block_strides[static_cast<std::size_t>(i)] =
        d.at("block_strides")[static_cast<std::size_t>(i)].get<std::int64_t>();
  }
  cfg.se_reduction = d.at("se_reduction").get<std::int64_t>();
  return cfg;
}

void print_eval(const std::string& label, const kd::metrics::EvalResult& r) {
  std::printf("%s: acc=%.4f precision=%.4f recall=%.4f f1=%.4f auc=%.4f map=%.4f\n",
              label.c_str(), r.accuracy, r.precision_macro, r.recall_macro, r.f1_macro,
              r.auc_macro, r.map_macro);
}

// Table-VII-shaped comparison file; reruns upsert their row so the file stays
// byte-stable for identical flags.
void upsert_comparison(const fs::path& out, const std::string& mode,
                       const kd::metrics::EvalResult& r) {
  const fs::path path = out / "comparison.csv";
  std::map<std::string, std::string> rows;
  if (fs::exists(path)) {
    std::ifstream f(path);
    std::string line;
    std::getline(f, line);  // header
    while (std::getline(f, line)) {
      const auto comma = line.find(',');
      if (comma != std::string::npos) rows[line.substr(0, comma)] = line.substr(comma + 1);
    }
  }
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f", r.accuracy, r.f1_macro, r.auc_macro,
                r.map_macro);
  rows[mode] = buf;
  std::ofstream f(path);
  if (!f) throw kd::DataError("cannot write " + path.string());
  f << "mode,test_acc,f1,auc,map\n";
  for (const char* m : {"none", "attn", "logit", "hybrid"})
    if (rows.count(m)) f << m << ',' << rows[m] << '\n';
}

std::vector<double> parse_taus(const std::string& csv) {
  std::vector<double> taus;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      taus.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw kd::ConfigError("invalid tau value '" + item + "' in --taus");
    }
  }
  return taus;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hybrid knowledge-distillation pipeline"};
  app.require_subcommand(1);

  std::uint64_t seed = 0;
  std::string out_dir;
  std::string config_path;
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--seed", seed, "RNG seed (all randomness derives from it)");
    cmd->add_option("--out", out_dir, "output directory")->required();
    cmd->add_option("--config", config_path, "JSON config file; explicit flags win");
  };

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "synthesize a PNG dataset");
  DataOpts gen_data;
  gen_data.add(gen);
  gen->get_option("--data")->excludes(gen->get_option("--tier"));  // synthesis only
  add_common(gen);

  // train-teacher
  auto* tt = app.add_subcommand("train-teacher", "phase 1: teacher pretraining");
  DataOpts tt_data;
  TrainOpts tt_train;
  bool tt_focal = false;
  double tt_focal_gamma = 2.0;
  tt_data.add(tt);
  tt_train.add(tt, false);
  tt->add_flag("--focal", tt_focal, "use focal loss instead of cross-entropy");
  tt->add_option("--focal-gamma", tt_focal_gamma, "focal loss gamma");
  add_common(tt);

  // distill
  auto* di = app.add_subcommand("distill", "phase 2: student distillation");
  DataOpts di_data;
  TrainOpts di_train;
  std::string di_teacher, di_mode = "hybrid";
  di->add_option("--teacher", di_teacher, "teacher checkpoint (KDF1)")->required();
  di->add_option("--mode", di_mode, "distillation mode: hybrid | logit | attn | none")
      ->check(CLI::IsMember({"hybrid", "logit", "attn", "none"}));
  di_data.add(di);
  di_train.add(di, true);
  add_common(di);

  // sweep-tau
  auto* sw = app.add_subcommand("sweep-tau", "temperature ablation sweep");
  DataOpts sw_data;
  TrainOpts sw_train;
  std::string sw_teacher, sw_taus = "1,2,4,6,8,10,12";
  sw->add_option("--teacher", sw_teacher, "teacher checkpoint (KDF1)")->required();
  sw->add_option("--taus", sw_taus, "comma-separated temperature grid");
  sw_data.add(sw);
  sw_train.add(sw, true);
  add_common(sw);

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a student checkpoint on the test split");
  DataOpts ev_data;
  std::string ev_student;
  std::int64_t ev_batch = 32;
  ev->add_option("--student", ev_student, "student checkpoint, float32 or int8")->required();
  ev->add_option("--batch", ev_batch, "batch size");
  ev_data.add(ev);
  add_common(ev);

  // quantize
  auto* qu = app.add_subcommand("quantize", "post-training int8 quantization of a student");
  DataOpts qu_data;
  std::string qu_student;
  std::int64_t qu_calib = 128, qu_batch = 32;
  qu->add_option("--student", qu_student, "float32 student checkpoint")->required();
  qu->add_option("--calib", qu_calib, "calibration image count (from the train split)");
  qu->add_option("--batch", qu_batch, "batch size");
  qu_data.add(qu);
  add_common(qu);

  // bench
  auto* be = app.add_subcommand("bench", "latency/memory benchmark");
  std::string be_student, be_quant, be_teacher;
  int be_runs = 30, be_warmup = 5;
  be->add_option("--student", be_student, "float32 student checkpoint");
  be->add_option("--quant", be_quant, "int8 student checkpoint");
  be->add_option("--teacher", be_teacher, "teacher checkpoint");
  be->add_option("--runs", be_runs, "timed runs");
  be->add_option("--warmup", be_warmup, "warmup runs");
  add_common(be);

  try {
    try {
      app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
      return app.exit(e);
    }
    CLI::App* sub = app.get_subcommands().front();
    apply_config_file(sub, config_path);
    const fs::path out(out_dir);

    if (sub == gen) {
      json params = gen_data.to_json();
      params["seed"] = seed;
      write_run_config(out, "gen-data", params);
      kd::data::SyntheticSpec spec;
      spec.n_classes = gen_data.classes;
      spec.images_per_class = gen_data.per_class;
      spec.image_size = gen_data.size;
      spec.tier = kd::data::tier_from_string(gen_data.tier);
      spec.seed = seed;
      auto ds = kd::data::generate(spec);
      kd::data::export_directory(ds, (out / "dataset").string());
      std::printf("wrote %zu images to %s (train=%zu val=%zu test=%zu)\n", ds.images.size(),
                  (out / "dataset").c_str(), ds.train_idx.size(), ds.val_idx.size(),
                  ds.test_idx.size());
    } else if (sub == tt) {
      json params = tt_data.to_json();
      const json train_params = tt_train.to_json();
      for (const auto& [k, v] : train_params.items()) params[k] = v;
      params["focal"] = tt_focal;
      params["focal_gamma"] = tt_focal_gamma;
      params["seed"] = seed;
      write_run_config(out, "train-teacher", params);
      auto ds = tt_data.load(seed);
      kd::TeacherConfig tcfg;
      tcfg.n_classes = ds.n_classes;
      tcfg.image_size = ds.image_size;
      kd::TeacherModel<float> teacher(tcfg, kd::Rng::child(seed, "teacher"));
      kd::DistillConfig cfg = tt_train.config(seed);
      cfg.use_focal = tt_focal;
      cfg.focal_gamma = tt_focal_gamma;
      auto rep = kd::run_teacher_pretrain(teacher, ds, cfg);
      kd::save_checkpoint(
          kd::checkpoint_from_params(teacher.named_parameters(), teacher_descriptor(tcfg)),
          (out / "teacher.kdf1").string());
      kd::write_train_report_csv(rep, (out / "train_report.csv").string());
      write_text(out / "train_report.json", epochs_to_json(rep).dump(2) + "\n");
      auto test = kd::evaluate_model(teacher, ds, ds.test_idx, cfg.batch_size);
      print_eval("teacher test", test);
      write_text(out / "eval.json", eval_to_json(test).dump(2) + "\n");
    } else if (sub == di) {
      json params = di_data.to_json();
      const json train_params = di_train.to_json();
      for (const auto& [k, v] : train_params.items()) params[k] = v;
      params["teacher"] = di_teacher;
      params["mode"] = di_mode;
      params["seed"] = seed;
      write_run_config(out, "distill", params);
      auto ds = di_data.load(seed);
      auto teacher = load_teacher(di_teacher);
      kd::DistillConfig cfg = di_train.config(seed);
      if (di_mode == "none") cfg.alpha = 0, cfg.beta = 0;
      if (di_mode == "logit") cfg.beta = 0;
      if (di_mode == "attn") cfg.alpha = 0;
      kd::StudentModel<float> student(kd::StudentConfig{ds.n_classes, ds.image_size},
                                      kd::Rng::child(seed, "student"));
      auto rep = cfg.alpha == 0 && cfg.beta == 0
                     ? kd::run_student_baseline(student, ds, cfg)
                     : kd::run_distillation(&teacher, student, ds, cfg);
      kd::save_checkpoint(kd::checkpoint_from_student(student),
                          (out / ("student_" + di_mode + ".kdf1")).string());
      kd::write_train_report_csv(rep, (out / ("train_report_" + di_mode + ".csv")).string());
      write_text(out / ("train_report_" + di_mode + ".json"), epochs_to_json(rep).dump(2) + "\n");
      auto test = kd::evaluate_model(student, ds, ds.test_idx, cfg.batch_size);
      print_eval("student (" + di_mode + ") test", test);
      upsert_comparison(out, di_mode, test);
    } else if (sub == sw) {
      json params = sw_data.to_json();
      const json train_params = sw_train.to_json();
      for (const auto& [k, v] : train_params.items()) params[k] = v;
      params["teacher"] = sw_teacher;
      params["taus"] = sw_taus;
      params["seed"] = seed;
      write_run_config(out, "sweep-tau", params);
      auto ds = sw_data.load(seed);
      auto teacher = load_teacher(sw_teacher);
      auto rep = kd::temperature_sweep(parse_taus(sw_taus), teacher, ds, sw_train.config(seed));
      kd::write_sweep_report_csv(rep, (out / "sweep.csv").string());
      json rows = json::array();
      for (const auto& r : rep.rows) {
        rows.push_back({{"tau", r.tau},
                        {"test_acc", r.test_acc},
                        {"f1", r.f1},
                        {"auc", r.auc},
                        {"map", r.map}});
        std::printf("tau=%.1f acc=%.4f f1=%.4f auc=%.4f map=%.4f\n", r.tau, r.test_acc, r.f1,
                    r.auc, r.map);
      }
      write_text(out / "sweep.json", json{{"rows", rows}}.dump(2) + "\n");
    } else if (sub == ev) {
      json params = ev_data.to_json();
      params["student"] = ev_student;
      params["batch"] = ev_batch;
      params["seed"] = seed;
      write_run_config(out, "eval", params);
      auto ds = ev_data.load(seed);
      auto ckpt = kd::load_checkpoint(ev_student);
      kd::StudentConfig scfg = student_config_from_descriptor(ckpt.descriptor);
      const bool is_int8 = json::parse(ckpt.descriptor).value("kind", "") == "int8";
      kd::metrics::EvalResult test;
      if (is_int8) {
        auto qs = kd::quantized_from_checkpoint<float>(ckpt, scfg);
        auto model = kd::dequantize_model(qs);
        const auto aq = qs.act;
        kd::NoGradGuard ng;
        // fake-quant forward path
        struct QView {
          const kd::StudentModel<float>& m;
          const kd::StudentModel<float>::ActQuant& aq;
          kd::StudentModel<float>::Output forward(const kd::Tensor<float>& x) const {
            return m.forward(x, &aq);
          }
        } view{model, aq};
        test = kd::evaluate_model(view, ds, ds.test_idx, ev_batch);
      } else {
        kd::StudentModel<float> model(scfg, kd::Rng::child(0, "eval/load"));
        kd::load_student_from_checkpoint(ckpt, model);
        test = kd::evaluate_model(model, ds, ds.test_idx, ev_batch);
      }
      print_eval(std::string("student (") + (is_int8 ? "int8" : "float32") + ") test", test);
      std::ofstream f(out / "eval.csv");
      f << "accuracy,precision_macro,recall_macro,f1_macro,auc_macro,map_macro\n";
      char buf[256];
      std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n", test.accuracy,
                    test.precision_macro, test.recall_macro, test.f1_macro, test.auc_macro,
                    test.map_macro);
      f << buf;
      write_text(out / "eval.json", eval_to_json(test).dump(2) + "\n");
    } else if (sub == qu) {
      json params = qu_data.to_json();
      params["student"] = qu_student;
      params["calib"] = qu_calib;
      params["batch"] = qu_batch;
      params["seed"] = seed;
      write_run_config(out, "quantize", params);
      auto ds = qu_data.load(seed);
      auto ckpt = kd::load_checkpoint(qu_student);
      kd::StudentConfig scfg = student_config_from_descriptor(ckpt.descriptor);
      kd::StudentModel<float> model(scfg, kd::Rng::child(0, "quantize/load"));
      kd::load_student_from_checkpoint(ckpt, model);
      std::vector<std::int64_t> calib(
          ds.train_idx.begin(),
          ds.train_idx.begin() + std::min<std::size_t>(static_cast<std::size_t>(qu_calib),
                                                       ds.train_idx.size()));
      auto qs = kd::quantize_model(model, ds, calib, qu_batch);
      auto qckpt = kd::checkpoint_from_quantized(qs);
      kd::save_checkpoint(qckpt, (out / "student_int8.kdf1").string());
      auto float_test = kd::evaluate_model(model, ds, ds.test_idx, qu_batch);
      auto dq = kd::dequantize_model(qs);
      struct QView {
        const kd::StudentModel<float>& m;
        const kd::StudentModel<float>::ActQuant& aq;
        kd::StudentModel<float>::Output forward(const kd::Tensor<float>& x) const {
          return m.forward(x, &aq);
        }
      } view{dq, qs.act};
      auto int8_test = kd::evaluate_model(view, ds, ds.test_idx, qu_batch);
      print_eval("float32 test", float_test);
      print_eval("int8 test", int8_test);
      const double float_size =
          static_cast<double>(kd::serialize_checkpoint(ckpt).size());
      const double int8_size = static_cast<double>(kd::serialize_checkpoint(qckpt).size());
      std::printf("accuracy delta: %.4fpp, size ratio: %.1f%%\n",
                  (float_test.accuracy - int8_test.accuracy) * 100.0,
                  100.0 * int8_size / float_size);
      json report = {{"float", eval_to_json(float_test)},
                     {"int8", eval_to_json(int8_test)},
                     {"accuracy_drop_pp", (float_test.accuracy - int8_test.accuracy) * 100.0},
                     {"float_bytes", float_size},
                     {"int8_bytes", int8_size}};
      write_text(out / "quant_report.json", report.dump(2) + "\n");
    } else if (sub == be) {
      if (be_student.empty() && be_quant.empty() && be_teacher.empty())
        throw kd::ConfigError("bench needs at least one of --student, --quant, --teacher");
      json params = {{"student", be_student}, {"quant", be_quant},   {"teacher", be_teacher},
                     {"runs", be_runs},       {"warmup", be_warmup}, {"seed", seed}};
      write_run_config(out, "bench", params);
      std::vector<kd::BenchReport> rows;
      if (!be_teacher.empty()) {
        auto teacher = load_teacher(be_teacher);
        auto ckpt = kd::load_checkpoint(be_teacher);
        rows.push_back(kd::benchmark_forward(
            "teacher_float32", kd::teacher_cost(teacher.config()),
            static_cast<std::int64_t>(kd::serialize_checkpoint(ckpt).size()),
            teacher.config().image_size, [&](const kd::Tensor<float>& x) { teacher.forward(x); },
            be_runs, be_warmup));
      }
      if (!be_student.empty()) {
        auto ckpt = kd::load_checkpoint(be_student);
        kd::StudentConfig scfg = student_config_from_descriptor(ckpt.descriptor);
        kd::StudentModel<float> model(scfg, kd::Rng::child(0, "bench/load"));
        kd::load_student_from_checkpoint(ckpt, model);
        rows.push_back(kd::benchmark_forward(
            "student_float32", kd::student_cost(scfg),
            static_cast<std::int64_t>(kd::serialize_checkpoint(ckpt).size()), scfg.image_size,
            [&](const kd::Tensor<float>& x) { model.forward(x); }, be_runs, be_warmup));
      }
      if (!be_quant.empty()) {
        auto ckpt = kd::load_checkpoint(be_quant);
        kd::StudentConfig scfg = student_config_from_descriptor(ckpt.descriptor);
        auto qs = kd::quantized_from_checkpoint<float>(ckpt, scfg);
        auto model = kd::dequantize_model(qs);
        rows.push_back(kd::benchmark_forward(
            "student_int8", kd::student_cost(scfg),
            static_cast<std::int64_t>(kd::serialize_checkpoint(ckpt).size()), scfg.image_size,
            [&](const kd::Tensor<float>& x) { model.forward(x, &qs.act); }, be_runs, be_warmup));
      }
      kd::write_bench_report_csv(rows, (out / "bench.csv").string());
      json jrows = json::array();
      for (const auto& r : rows) {
        jrows.push_back({{"model", r.model},
                         {"params_m", r.params_m},
                         {"flops_g", r.flops_g},
                         {"size_mb", r.size_mb},
                         {"lat_ms_mean", r.lat_ms_mean},
                         {"lat_ms_std", r.lat_ms_std},
                         {"mem_mb", r.mem_mb}});
        std::printf("%s: %.3fM params, %.4fG flops, %.3fMB, %.2f±%.2f ms, %.2fMB peak\n",
                    r.model.c_str(), r.params_m, r.flops_g, r.size_mb, r.lat_ms_mean,
                    r.lat_ms_std, r.mem_mb);
      }
      write_text(out / "bench.json",
                 json{{"memory_definition", "peak tensor allocation delta during timed runs"},
                      {"rows", jrows}}
                         .dump(2) +
                     "\n");
    }
  } catch (const kd::Error& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
