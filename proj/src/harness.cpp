#include "gdpl/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "gdpl/checkpoint.hpp"
#include "gdpl/ops.hpp"
#include "json.hpp"

namespace gdpl {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

// ----------------------------------------------------------------- backbone

Backbone pretrain_backbone(const PretrainConfig& config) {
  DatasetConfig natural;
  natural.seed = derive_seed(config.seed, 31);
  natural.n_classes = catalogue_size();
  natural.per_class = config.clip_per_class;
  natural.style = Style::Natural;
  natural.image_size = config.encoder.image_size;
  SyntheticDataset pairs = generate_dataset(natural);

  ClipConfig clip = config.clip;
  clip.seed = derive_seed(config.seed, 32);
  ClipResult dual = clip_lite_pretrain(pairs.images, pairs.labels, config.encoder, clip);

  if (config.provenance == DomainProvenance::SeededRandom) {
    return {config.encoder, std::move(dual.vision), std::move(dual.text),
            DomainEncoder::seeded_random(config.encoder, derive_seed(config.seed, 35))};
  }
  DatasetConfig shifted = natural;
  shifted.seed = derive_seed(config.seed, 33);
  shifted.per_class = config.mae_per_class;
  shifted.style = Style::DomainShifted;
  shifted.domain_id = config.domain_id;
  SyntheticDataset unlabeled = generate_dataset(shifted);
  MaeConfig mae = config.mae;
  mae.seed = derive_seed(config.seed, 34);
  MaeResult domain = mae_lite_pretrain(unlabeled.images, config.encoder, mae);
  return {config.encoder, std::move(dual.vision), std::move(dual.text), std::move(domain.encoder)};
}

void save_backbone(const fs::path& dir, const Backbone& backbone) {
  save_group(dir, "vision", backbone.vision.parameters());
  save_group(dir, "text", backbone.text.parameters());
  save_group(dir, "domain", backbone.domain.network().parameters(), to_string(backbone.domain.provenance()));
}

Backbone load_backbone(const fs::path& dir, const EncoderConfig& config) {
  for (const char* group : {"vision", "text", "domain"}) {
    if (!has_group(dir, group)) throw CheckpointIoError("no '" + std::string(group) + "' checkpoint in " + dir.string());
  }
  Rng scratch(0);
  VisionEncoder vision = VisionEncoder::init(config, scratch, "vision");
  TextEncoder text = TextEncoder::init(config, scratch, "text");
  VisionEncoder domain_net = VisionEncoder::init(config, scratch, "domain");
  load_group(dir, "vision", vision.parameters());
  load_group(dir, "text", text.parameters());
  load_group(dir, "domain", domain_net.parameters());
  set_trainable(vision.parameters(), false);
  set_trainable(text.parameters(), false);
  const auto provenance =
      group_note(dir, "domain") == to_string(DomainProvenance::MaeLite) ? DomainProvenance::MaeLite
                                                                         : DomainProvenance::SeededRandom;
  DomainEncoder domain(std::move(domain_net), provenance);
  domain.freeze();
  return {config, std::move(vision), std::move(text), std::move(domain)};
}

// ------------------------------------------------------------------ episode

void validate(const EpisodeConfig& config) {
  if (config.shots < 1) throw std::invalid_argument("shots must be at least 1");
  if (config.n_base < 1 || config.n_novel < 1) throw std::invalid_argument("need base and novel classes");
  if (config.test_per_class < 1) throw std::invalid_argument("test pool must hold at least one image per class");
  if (config.batch_train < 1 || config.batch_eval < 1) throw std::invalid_argument("batch sizes must be positive");
  if (config.first_class + config.n_base + config.n_novel > catalogue_size()) {
    throw std::invalid_argument("episode classes exceed the " + std::to_string(catalogue_size()) + "-class catalogue");
  }
}

namespace {

std::uint64_t data_seed(const EpisodeConfig& c) { return derive_seed(c.seed, 1); }
std::uint64_t init_seed(const EpisodeConfig& c) { return derive_seed(c.seed, 2); }
std::uint64_t noise_seed(const EpisodeConfig& c) { return derive_seed(c.seed, 3); }

std::vector<std::size_t> label_positions(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& indices,
                                         const std::vector<std::size_t>& classes) {
  std::vector<std::size_t> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) {
    auto it = std::find(classes.begin(), classes.end(), labels.at(i));
    if (it == classes.end()) throw std::invalid_argument("label " + std::to_string(labels[i]) + " is not a candidate");
    out.push_back(static_cast<std::size_t>(it - classes.begin()));
  }
  return out;
}

std::size_t argmax_row(std::span<const double> v, std::size_t row, std::size_t width) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < width; ++c) {
    if (v[row * width + c] > v[row * width + best]) best = c;
  }
  return best;
}

double mean_defined(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v) {
    if (std::isfinite(x)) s += x, ++n;
  }
  return n ? s / static_cast<double>(n) : std::nan("");
}

double safe_hm(double a, double b) { return a + b == 0.0 ? 0.0 : harmonic_mean(a, b); }

}  // namespace

EpisodeData make_episode_data(const Backbone& backbone, const EpisodeConfig& config) {
  validate(config);
  DatasetConfig dc;
  dc.seed = data_seed(config);
  dc.n_classes = config.n_base + config.n_novel;
  dc.first_class = config.first_class;
  dc.per_class = config.shots + config.test_per_class;
  dc.style = Style::DomainShifted;
  dc.domain_id = config.domain_id;
  dc.image_size = backbone.config.image_size;
  EpisodeData data{generate_dataset(dc), {}, {}};
  data.split = split_base_novel(data.dataset, config.n_base, config.n_novel, config.shots, data_seed(config));
  data.images = prepare_images(backbone, data.dataset.images);
  return data;
}

EpisodeResult train_episode(const Backbone& backbone, const EpisodeConfig& config) {
  return train_episode(backbone, config, make_episode_data(backbone, config));
}

EpisodeResult train_episode(const Backbone& backbone, const EpisodeConfig& config, const EpisodeData& data) {
  validate(config);
  const auto start = std::chrono::steady_clock::now();
  Rng init_rng(init_seed(config));
  Rng noise_rng(noise_seed(config));
  Rng order_rng(derive_seed(data_seed(config), 7));
  GdplModel model = GdplModel::init(backbone, config.gdpl, init_rng);
  Sgd optimizer(model.trainable_parameters(), config.sgd);

  const auto& split = data.split;
  const auto& labels = data.dataset.labels;
  const ImageBatch probe = select(data.images, split.train);
  const auto train_targets = label_positions(labels, split.train, split.base_classes);

  EpisodeReport report;
  report.config = config;
  report.data_seed = data_seed(config);
  report.init_seed = init_seed(config);
  report.noise_seed = noise_seed(config);
  report.zero_shot_base =
      evaluate_zero_shot(backbone, data.dataset, split.base_test, split.base_classes, config.batch_eval);
  report.zero_shot_novel =
      evaluate_zero_shot(backbone, data.dataset, split.novel_test, split.novel_classes, config.batch_eval);
  report.zero_shot_hm = safe_hm(report.zero_shot_base, report.zero_shot_novel);

  auto record = [&](std::size_t epoch, double loss) {
    EpochRecord r;
    r.epoch = epoch;
    r.loss = loss;
    r.acc_base = evaluate(model, data.images, labels, split.base_test, split.base_classes, config.batch_eval);
    r.acc_novel = evaluate(model, data.images, labels, split.novel_test, split.novel_classes, config.batch_eval);
    r.hm = safe_hm(r.acc_base, r.acc_novel);
    r.layer_cos = track_orthogonality(model, probe);
    r.mean_cos = mean_defined(r.layer_cos);
    report.epochs.push_back(std::move(r));
  };

  double initial_loss = 0.0;
  {
    NoGradGuard guard;
    for (std::size_t b = 0; b < split.train.size(); b += config.batch_eval) {
      const std::size_t e = std::min(split.train.size(), b + config.batch_eval);
      std::vector<std::size_t> rows(split.train.begin() + b, split.train.begin() + e);
      std::vector<std::size_t> targets(train_targets.begin() + b, train_targets.begin() + e);
      auto out = model.forward(select(data.images, rows), split.base_classes);
      initial_loss += contrastive_loss(out.probabilities, targets).item() * static_cast<double>(rows.size());
    }
    initial_loss /= static_cast<double>(split.train.size());
  }
  record(0, initial_loss);

  std::vector<std::size_t> order(split.train.size());
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    order_rng.shuffle(order.begin(), order.end());
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_train) {
      const std::size_t e = std::min(order.size(), b + config.batch_train);
      std::vector<std::size_t> rows, targets;
      for (std::size_t i = b; i < e; ++i) {
        rows.push_back(split.train[order[i]]);
        targets.push_back(train_targets[order[i]]);
      }
      ForwardOptions opts{true, &noise_rng};
      auto out = model.forward(select(data.images, rows), split.base_classes, opts);
      Tensor loss = contrastive_loss(out.probabilities, targets);
      total += loss.item() * static_cast<double>(rows.size());
      optimizer.zero_grad();
      backward(loss);
      optimizer.step();
    }
    record(epoch, total / static_cast<double>(order.size()));
  }

  const auto& last = report.epochs.back();
  report.acc_base = last.acc_base;
  report.acc_novel = last.acc_novel;
  report.hm = last.hm;
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {std::move(model), std::move(report)};
}

// --------------------------------------------------------------- evaluation

double evaluate(const GdplModel& model, const ImageBatch& images, const std::vector<std::size_t>& labels,
                const std::vector<std::size_t>& indices, const std::vector<std::size_t>& classes,
                std::size_t batch_size) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty split");
  if (classes.empty()) throw std::invalid_argument("evaluate: no candidate classes");
  const auto targets = label_positions(labels, indices, classes);
  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < indices.size(); b += batch_size) {
    const std::size_t e = std::min(indices.size(), b + batch_size);
    std::vector<std::size_t> rows(indices.begin() + b, indices.begin() + e);
    auto out = model.forward(select(images, rows), classes);
    auto v = out.logits.values();
    for (std::size_t r = 0; r < rows.size(); ++r) correct += argmax_row(v, r, classes.size()) == targets[b + r];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(indices.size());
}

double evaluate_zero_shot(const Backbone& backbone, const SyntheticDataset& data,
                          const std::vector<std::size_t>& indices, const std::vector<std::size_t>& classes,
                          std::size_t batch_size, double temperature) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty split");
  const auto targets = label_positions(data.labels, indices, classes);
  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t b = 0; b < indices.size(); b += batch_size) {
    const std::size_t e = std::min(indices.size(), b + batch_size);
    std::vector<Image> imgs;
    for (std::size_t i = b; i < e; ++i) imgs.push_back(data.images[indices[i]]);
    Tensor logits = zero_shot_logits(backbone.vision, backbone.text, imgs, classes, temperature);
    auto v = logits.values();
    for (std::size_t r = 0; r < imgs.size(); ++r) correct += argmax_row(v, r, classes.size()) == targets[b + r];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(indices.size());
}

double harmonic_mean(double acc_base, double acc_novel) {
  if (acc_base < 0.0 || acc_novel < 0.0 || acc_base > 100.0 || acc_novel > 100.0) {
    throw std::invalid_argument("accuracies must lie in [0, 100]");
  }
  if (acc_base + acc_novel == 0.0) throw std::invalid_argument("harmonic mean undefined for two zero accuracies");
  return 2.0 * acc_base * acc_novel / (acc_base + acc_novel);
}

std::vector<double> track_orthogonality(const GdplModel& model, const ImageBatch& probe) {
  NoGradGuard guard;
  const auto& prompts = model.prompts();
  Tensor fhat = prompts.projection.forward(probe.domain_features);
  std::vector<double> out;
  auto [a, b] = language_slot_inputs(prompts, fhat, Tensor());
  out.push_back(mean_abs_cosine(a, b).value_or(std::nan("")));
  for (const auto& p : prompts.language) {
    auto [pa, pb] = vision_slot_inputs(p, fhat);
    out.push_back(mean_abs_cosine(pa, pb).value_or(std::nan("")));
  }
  return out;
}

CrossDatasetResult cross_dataset_eval(const GdplModel& model, const std::vector<SyntheticDataset>& targets,
                                      const EpisodeConfig& config) {
  CrossDatasetResult result;
  for (const auto& target : targets) {
    for (std::size_t c : target.classes) {
      if (c >= Vocabulary::kMaxClasses) {
        throw std::invalid_argument("target class " + std::to_string(c) + " has no token in the shared vocabulary");
      }
    }
    BaseNovelSplit split = split_base_novel(target, config.n_base, config.n_novel, config.shots, data_seed(config));
    ImageBatch images = prepare_images(model.backbone(), target.images);
    result.gdpl.push_back(
        evaluate(model, images, target.labels, split.base_test, split.base_classes, config.batch_eval));
    result.zero_shot.push_back(
        evaluate_zero_shot(model.backbone(), target, split.base_test, split.base_classes, config.batch_eval));
  }
  return result;
}

SeedSummary summarize(const std::vector<EpisodeReport>& reports) {
  if (reports.empty()) throw std::invalid_argument("summarize: no reports");
  SeedSummary s;
  for (const auto& r : reports) {
    s.mean_acc_base += r.acc_base;
    s.mean_acc_novel += r.acc_novel;
    s.mean_of_hm += r.hm;
  }
  const double n = static_cast<double>(reports.size());
  s.mean_acc_base /= n;
  s.mean_acc_novel /= n;
  s.mean_of_hm /= n;
  s.hm_of_means = safe_hm(s.mean_acc_base, s.mean_acc_novel);
  return s;
}

// -------------------------------------------------------------- persistence

namespace {

std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

ordered_json config_json(const EpisodeConfig& c) {
  return {{"seed", c.seed},
          {"n_base", c.n_base},
          {"n_novel", c.n_novel},
          {"shots", c.shots},
          {"test_per_class", c.test_per_class},
          {"epochs", c.epochs},
          {"batch_train", c.batch_train},
          {"batch_eval", c.batch_eval},
          {"domain_id", c.domain_id},
          {"first_class", c.first_class},
          {"n_ctx", c.gdpl.n_ctx},
          {"n_prompt", c.gdpl.n_prompt},
          {"depth", c.gdpl.depth},
          {"lora_rank", c.gdpl.lora_rank},
          {"pattern", c.gdpl.pattern.to_string()},
          {"quat_enabled", c.gdpl.use_quat},
          {"lora_enabled", c.gdpl.use_lora},
          {"temperature", c.gdpl.temperature},
          {"learning_rate", c.sgd.learning_rate},
          {"momentum", c.sgd.momentum}};
}

EpisodeConfig config_from_json(const nlohmann::json& j) {
  EpisodeConfig c;
  c.seed = j.at("seed");
  c.n_base = j.at("n_base");
  c.n_novel = j.at("n_novel");
  c.shots = j.at("shots");
  c.test_per_class = j.at("test_per_class");
  c.epochs = j.at("epochs");
  c.batch_train = j.at("batch_train");
  c.batch_eval = j.at("batch_eval");
  c.domain_id = j.at("domain_id");
  c.first_class = j.at("first_class");
  c.gdpl.n_ctx = j.at("n_ctx");
  c.gdpl.n_prompt = j.at("n_prompt");
  c.gdpl.depth = j.at("depth");
  c.gdpl.lora_rank = j.at("lora_rank");
  c.gdpl.pattern = SlotPattern::parse(j.at("pattern").get<std::string>());
  c.gdpl.use_quat = j.at("quat_enabled");
  c.gdpl.use_lora = j.at("lora_enabled");
  c.gdpl.temperature = j.at("temperature");
  c.sgd.learning_rate = j.at("learning_rate");
  c.sgd.momentum = j.at("momentum");
  return c;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointIoError("cannot write " + path.string());
  out << text;
  if (!out) throw CheckpointIoError("write failed for " + path.string());
}

}  // namespace

std::string metrics_csv(const EpisodeReport& report) {
  std::string out = "epoch,loss,acc_base,acc_novel,hm,mean_cos_sim\n";
  for (const auto& r : report.epochs) {
    out += std::to_string(r.epoch) + ',' + fixed(r.loss, 8) + ',' + fixed(r.acc_base, 4) + ',' + fixed(r.acc_novel, 4) +
           ',' + fixed(r.hm, 4) + ',' + fixed(r.mean_cos, 8) + '\n';
  }
  return out;
}

std::string report_json(const EpisodeReport& report) {
  ordered_json epochs = ordered_json::array();
  for (const auto& r : report.epochs) {
    epochs.push_back({{"epoch", r.epoch},
                      {"loss", r.loss},
                      {"acc_base", r.acc_base},
                      {"acc_novel", r.acc_novel},
                      {"hm", r.hm},
                      {"mean_cos_sim", r.mean_cos},
                      {"layer_cos_sim", r.layer_cos}});
  }
  ordered_json j = {{"acc_base", report.acc_base},
                    {"acc_novel", report.acc_novel},
                    {"hm", report.hm},
                    {"zero_shot", {{"acc_base", report.zero_shot_base},
                                   {"acc_novel", report.zero_shot_novel},
                                   {"hm", report.zero_shot_hm}}},
                    {"epochs", epochs},
                    {"config", config_json(report.config)},
                    {"seeds", {{"data", report.data_seed}, {"init", report.init_seed}, {"noise", report.noise_seed}}},
                    {"wall_clock_seconds", report.seconds}};
  return j.dump(2) + '\n';
}

std::string config_snapshot(const EpisodeConfig& config) {
  std::string out;
  const ordered_json j = config_json(config);
  for (const auto& [key, value] : j.items()) {
    out += key + " = " + (value.is_string() ? value.get<std::string>() : value.dump()) + '\n';
  }
  return out;
}

std::string svg_curve(const std::string& title, const std::vector<double>& values) {
  const double w = 480, h = 300, pad = 40;
  double lo = 0.0, hi = 1.0;
  std::vector<double> finite;
  for (double v : values) {
    if (std::isfinite(v)) finite.push_back(v);
  }
  if (!finite.empty()) {
    lo = *std::min_element(finite.begin(), finite.end());
    hi = *std::max_element(finite.begin(), finite.end());
    if (hi == lo) hi = lo + 1.0;
  }
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
     << "<text x=\"" << pad << "\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\">" << title << "</text>\n"
     << "<text x=\"4\" y=\"" << pad << "\" font-family=\"sans-serif\" font-size=\"10\">" << fixed(hi, 4) << "</text>\n"
     << "<text x=\"4\" y=\"" << h - pad << "\" font-family=\"sans-serif\" font-size=\"10\">" << fixed(lo, 4)
     << "</text>\n"
     << "<line x1=\"" << pad << "\" y1=\"" << h - pad << "\" x2=\"" << w - 10 << "\" y2=\"" << h - pad
     << "\" stroke=\"black\"/>\n"
     << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  const double span = values.size() > 1 ? static_cast<double>(values.size() - 1) : 1.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) continue;
    const double x = pad + (w - pad - 10) * static_cast<double>(i) / span;
    const double y = (h - pad) - (h - 2 * pad) * (values[i] - lo) / (hi - lo);
    os << fixed(x, 2) << ',' << fixed(y, 2) << ' ';
  }
  os << "\"/>\n</svg>\n";
  return os.str();
}

void save_prompts(const fs::path& dir, const GdplModel& model) {
  save_group(dir, "prompts", model.prompts().all_parameters());
  save_group(dir, "lora", model.lora().parameters());
}

void load_prompts(const fs::path& dir, GdplModel& model) {
  load_group(dir, "prompts", model.prompts().all_parameters());
  load_group(dir, "lora", model.lora().parameters());
}

void write_run(const fs::path& dir, const EpisodeResult& result) {
  std::error_code ec;
  fs::create_directories(dir / "curves", ec);
  if (ec) throw CheckpointIoError("cannot create " + dir.string() + ": " + ec.message());
  const auto& report = result.report;
  write_text(dir / "config.snapshot", config_snapshot(report.config));
  write_text(dir / "metrics.csv", metrics_csv(report));
  write_text(dir / "report.json", report_json(report));
  std::vector<double> loss, cos, hm;
  for (const auto& r : report.epochs) {
    loss.push_back(r.loss);
    cos.push_back(r.mean_cos);
    hm.push_back(r.hm);
  }
  write_text(dir / "curves" / "loss.svg", svg_curve("training loss", loss));
  write_text(dir / "curves" / "orthogonality.svg", svg_curve("mean |cos| of quaternion slot inputs", cos));
  write_text(dir / "curves" / "hm.svg", svg_curve("harmonic mean", hm));
  save_prompts(dir / "checkpoints", result.model);
}

EpisodeReport read_report(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw CheckpointIoError("cannot read " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointIoError("corrupt report " + path.string() + ": " + e.what());
  }
  EpisodeReport r;
  r.config = config_from_json(j.at("config"));
  r.acc_base = j.at("acc_base");
  r.acc_novel = j.at("acc_novel");
  r.hm = j.at("hm");
  r.zero_shot_base = j.at("zero_shot").at("acc_base");
  r.zero_shot_novel = j.at("zero_shot").at("acc_novel");
  r.zero_shot_hm = j.at("zero_shot").at("hm");
  for (const auto& e : j.at("epochs")) {
    EpochRecord rec;
    rec.epoch = e.at("epoch");
    rec.loss = e.at("loss");
    rec.acc_base = e.at("acc_base");
    rec.acc_novel = e.at("acc_novel");
    rec.hm = e.at("hm");
    rec.mean_cos = e.at("mean_cos_sim");
    rec.layer_cos = e.at("layer_cos_sim").get<std::vector<double>>();
    r.epochs.push_back(std::move(rec));
  }
  r.data_seed = j.at("seeds").at("data");
  r.init_seed = j.at("seeds").at("init");
  r.noise_seed = j.at("seeds").at("noise");
  r.seconds = j.at("wall_clock_seconds");
  return r;
}

}  // namespace gdpl
