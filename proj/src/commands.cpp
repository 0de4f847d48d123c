#include "parnet/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "parnet/error.hpp"
#include "parnet/netpbm.hpp"
#include "parnet/parallel.hpp"

namespace parnet::cli {
namespace {

constexpr const char* kVelocityPrefix = "optim.velocity.";

std::string fixed(double value, int digits) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(digits) << value;
  return out.str();
}

std::string csv_float(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%.6g", value);
  return buffer;
}

ParNetModel build_model(const RunConfig& config, std::mt19937_64& rng) { return ParNetModel(config.model_config(), rng); }

void append_line(const std::filesystem::path& path, const std::string& line, bool truncate) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, truncate ? std::ios::trunc : std::ios::app);
  if (!out) throw IoError("cannot write " + path.string());
  out << line << "\n";
}

data::Dataset load_dataset(const RunConfig& config) {
  if (!std::filesystem::exists(config.data)) {
    throw IoError("dataset manifest " + config.data + " not found; run `parnet gen --data " + config.data + "` first");
  }
  data::Dataset dataset = data::load_manifest(config.data);
  check_compatible(config, dataset);
  return dataset;
}

std::string box_string(const BoundingBox& box) {
  return "(" + std::to_string(box.row0) + "," + std::to_string(box.col0) + ")-(" + std::to_string(box.row1) + "," +
         std::to_string(box.col1) + ")";
}

// Rewrites one key of the base config through the key=value form, so grid
// axes accept exactly the keys and value syntax of a config file.
RunConfig with_value(const RunConfig& base, const std::string& key, const std::string& value) {
  const bool is_string = key == "sharing" || key == "data" || key == "checkpoint" || key == "metrics";
  std::istringstream in(to_kv(base));
  std::string text;
  std::string line;
  bool known = key == "aux_widths";
  while (std::getline(in, line)) {
    if (line.rfind(key + "=", 0) == 0) {
      known = true;
      continue;
    }
    text += line + "\n";
  }
  if (!known) throw ConfigError("grid axis '" + key + "' is not a config key");
  text += key + "=" + (is_string ? "\"" + value + "\"" : value) + "\n";
  return from_kv(text, "grid " + key + "=" + value);
}

}  // namespace

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

TrainingState fresh_state(const RunConfig& config, float data_mean) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  ParNetModel model = build_model(config, rng);
  return TrainingState{config, std::move(model), config.optimizer(), rng, 0, data_mean};
}

Checkpoint capture(const TrainingState& state) {
  Checkpoint checkpoint;
  checkpoint.config = state.config;
  checkpoint.epochs_completed = state.epochs_completed;
  checkpoint.data_mean = state.data_mean;
  for (const auto& [name, tensor] : state.model.named_parameters()) checkpoint.tensors.emplace_back(name, *tensor);
  if (!state.optimizer.velocity.empty()) {
    const auto trainable = state.model.trainable_parameters();
    for (std::size_t i = 0; i < trainable.size(); ++i) {
      checkpoint.tensors.emplace_back(kVelocityPrefix + trainable[i].first, state.optimizer.velocity[i]);
    }
  }
  std::ostringstream rng;
  rng << state.rng;
  checkpoint.rng_state = rng.str();
  return checkpoint;
}

TrainingState restore(const Checkpoint& checkpoint) {
  TrainingState state = fresh_state(checkpoint.config, checkpoint.data_mean);
  state.epochs_completed = checkpoint.epochs_completed;
  for (const auto& [name, tensor] : state.model.named_parameters()) {
    const Tensorf* stored = checkpoint.find(name);
    if (stored == nullptr) throw DataError("checkpoint has no tensor '" + name + "' required by its config");
    if (stored->shape() != tensor->shape()) {
      throw DataError("checkpoint tensor '" + name + "' has shape " + shape_string(stored->shape()) + ", config expects " +
                      shape_string(tensor->shape()));
    }
    *tensor = *stored;
  }
  auto trainable = state.model.trainable_parameters();
  if (checkpoint.find(kVelocityPrefix + trainable.front().first) != nullptr) {
    state.optimizer.velocity.clear();
    for (const auto& [name, tensor] : trainable) {
      const Tensorf* v = checkpoint.find(kVelocityPrefix + name);
      if (v == nullptr || v->shape() != tensor->shape()) {
        throw DataError("checkpoint optimizer state for '" + name + "' is missing or misshapen");
      }
      state.optimizer.velocity.push_back(*v);
    }
  }
  std::istringstream rng(checkpoint.rng_state);
  rng >> state.rng;
  if (!rng) throw DataError("checkpoint RNG state is unreadable");
  state.optimizer.set_epoch(static_cast<int>(state.epochs_completed));
  return state;
}

std::string metrics_header(int regions) {
  std::string h = "epoch,lr,loss_total,loss_p";
  for (int t = 1; t <= regions; ++t) h += ",loss_r" + std::to_string(t);
  for (int t = 1; t < regions; ++t) h += ",loss_a" + std::to_string(t);
  h += ",loss_concat,acc_I";
  for (int t = 1; t <= regions; ++t) h += ",acc_R" + std::to_string(t);
  for (int t = 1; t < regions; ++t) h += ",acc_erased" + std::to_string(t);
  return h + ",acc_concat";
}

std::string metrics_line(const MetricsRow& row, int regions) {
  std::string line = std::to_string(row.epoch) + "," + csv_float(row.learning_rate) + "," + csv_float(row.losses.total) +
                     "," + csv_float(row.losses.primary);
  auto term = [](const std::vector<float>& v, int i) {
    return i < static_cast<int>(v.size()) ? csv_float(v[static_cast<std::size_t>(i)]) : std::string("0");
  };
  for (int t = 0; t < regions; ++t) line += "," + term(row.losses.region, t);
  for (int t = 0; t + 1 < regions; ++t) line += "," + term(row.losses.auxiliary, t);
  line += "," + (row.losses.concat ? csv_float(*row.losses.concat) : std::string(""));
  const int accuracy_columns = 2 * regions + 1;
  if (!row.test) return line + std::string(static_cast<std::size_t>(accuracy_columns), ',');
  const EvalReport& r = *row.test;
  line += "," + csv_float(r.input);
  for (double v : r.region) line += "," + csv_float(v);
  for (double v : r.erased) line += "," + csv_float(v);
  return line + "," + csv_float(r.concat);
}

std::string format_report(const EvalReport& report) {
  std::vector<std::string> names{"I"};
  std::vector<double> values{report.input};
  if (report.regions > 0) {
    for (int t = 1; t <= report.regions; ++t) {
      names.push_back("R_" + std::to_string(t));
      values.push_back(report.region[static_cast<std::size_t>(t - 1)]);
    }
    for (int t = 1; t < report.regions; ++t) {
      names.push_back("I'_" + std::to_string(t));
      values.push_back(report.erased[static_cast<std::size_t>(t - 1)]);
    }
    names.push_back("concat");
    values.push_back(report.concat);
  }
  std::ostringstream out;
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? " " : "") << std::setw(7) << names[i];
  out << "\n";
  for (std::size_t i = 0; i < values.size(); ++i) out << (i ? " " : "") << std::setw(7) << fixed(100.0 * values[i], 2);
  out << "\n";
  return out.str();
}

void check_compatible(const RunConfig& config, const data::Dataset& dataset) {
  if (dataset.num_classes != config.classes || dataset.channels != config.channels ||
      dataset.height != config.image_size || dataset.width != config.image_size) {
    throw DataError("dataset is " + std::to_string(dataset.num_classes) + " classes of " +
                    std::to_string(dataset.channels) + "x" + std::to_string(dataset.height) + "x" +
                    std::to_string(dataset.width) + " but the config expects " + std::to_string(config.classes) +
                    " classes of " + std::to_string(config.channels) + "x" + std::to_string(config.image_size) + "x" +
                    std::to_string(config.image_size) + "; adjust --classes/--channels/--image_size");
  }
}

void train_on(TrainingState& state, const data::Dataset& dataset,
              const std::function<void(const MetricsRow&, const TrainingState&)>& on_epoch) {
  TrainOptions options = state.config.train_options();
  options.threads = worker_count(options.threads);
  train(
      state.model, dataset.train, options, state.optimizer, state.rng,
      [&](const EpochMetrics& m) {
        state.epochs_completed = static_cast<std::uint32_t>(m.epoch + 1);
        MetricsRow row{m.epoch + 1, m.learning_rate, m.losses, std::nullopt};
        if (state.config.eval_every_epoch) row.test = evaluate(state.model, dataset.test, options.threads);
        if (on_epoch) on_epoch(row, state);
      },
      static_cast<int>(state.epochs_completed));
}

data::Dataset cmd_gen(const RunConfig& config) {
  config.validate();
  data::Dataset dataset = data::generate(config.generator());
  const std::filesystem::path manifest(config.data);
  if (manifest.filename() != "manifest.csv") {
    throw ConfigError("--data must name a manifest.csv file, got " + config.data);
  }
  data::save_dataset(dataset, manifest.parent_path().empty() ? "." : manifest.parent_path());
  return dataset;
}

EvalReport cmd_train(const RunConfig& config, bool resume) {
  config.validate();
  const data::Dataset dataset = load_dataset(config);
  TrainingState state = [&] {
    if (!resume) return fresh_state(config, dataset.mean);
    TrainingState resumed = restore(load_checkpoint(config.checkpoint));
    RunConfig expected = resumed.config;
    expected.epochs = config.epochs;
    if (!(expected == config)) {
      throw ConfigError("--resume: settings differ from the checkpoint's run; only --epochs may change");
    }
    resumed.config.epochs = config.epochs;
    return resumed;
  }();

  const int regions = config.regions;
  if (!resume || !std::filesystem::exists(config.metrics)) append_line(config.metrics, metrics_header(regions), true);
  train_on(state, dataset, [&](const MetricsRow& row, const TrainingState& s) {
    append_line(config.metrics, metrics_line(row, regions), false);
    save_checkpoint(config.checkpoint, capture(s));
  });
  if (state.epochs_completed == 0) save_checkpoint(config.checkpoint, capture(state));
  return evaluate(state.model, dataset.test, worker_count(config.threads));
}

EvalReport cmd_eval(const std::filesystem::path& checkpoint, data::Split split,
                    const std::optional<std::filesystem::path>& manifest, int threads) {
  const TrainingState state = restore(load_checkpoint(checkpoint));
  RunConfig config = state.config;
  if (manifest) config.data = manifest->string();
  const data::Dataset dataset = load_dataset(config);
  const auto& samples = split == data::Split::Train ? dataset.train : dataset.test;
  return evaluate(state.model, samples, worker_count(threads));
}

std::string cmd_mine(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                     const std::filesystem::path& out_dir) {
  const TrainingState state = restore(load_checkpoint(checkpoint));
  const RunConfig& config = state.config;
  const Raster raster = load_netpbm(image);
  if (raster.channels != config.channels || raster.height != config.image_size || raster.width != config.image_size) {
    throw DataError(image.string() + " is " + std::to_string(raster.channels) + "x" + std::to_string(raster.height) +
                    "x" + std::to_string(raster.width) + ", the model expects " + std::to_string(config.channels) +
                    "x" + std::to_string(config.image_size) + "x" + std::to_string(config.image_size));
  }
  const Prediction prediction = predict(state.model, data::to_tensor(raster, state.data_mean));
  const MiningTrajectory& traj = prediction.trajectory;

  std::filesystem::create_directories(out_dir);
  save_netpbm(out_dir / "input.pgm", raster, NetpbmEncoding::Plain);
  std::ostringstream log;
  log << "image " << image.string() << "\n";
  log << "prediction " << prediction.label << "\n";
  log << "p_net top1 " << nn::argmax(traj.p_trace.logits()) << "\n";
  for (std::size_t i = 0; i < traj.heatmaps.size(); ++i) {
    const int t = static_cast<int>(i) + 1;
    const std::string suffix = "_" + std::to_string(t) + ".pgm";
    save_heatmap_pgm(out_dir / ("heatmap" + suffix), traj.heatmaps[i].values);
    log << "step " << t << " cam_class " << traj.cam_classes[i];
    if (i < traj.regions.size()) {
      const auto& region = traj.regions[i];
      save_netpbm(out_dir / ("region" + suffix), to_raster_stretched(traj.crops[i]), NetpbmEncoding::Plain);
      log << " bbox " << box_string(region.bbox) << " area " << region.mask.count() << " activation_sum "
          << region.activation_sum << " r_net_top1 " << nn::argmax(traj.r_traces[i].logits());
    } else {
      log << " no region";
    }
    log << "\n";
    if (i < traj.erased.size()) {
      save_netpbm(out_dir / ("erased" + suffix), data::to_raster(traj.erased[i].pixels, state.data_mean),
                  NetpbmEncoding::Plain);
      log << "erased " << t << " cells " << traj.erased[i].erased_mask.count() << " a_net_top1 "
          << nn::argmax(traj.a_traces[i].logits()) << "\n";
    }
  }
  std::ofstream out(out_dir / "trajectory.txt");
  if (!out) throw IoError("cannot write " + (out_dir / "trajectory.txt").string());
  out << log.str();
  return log.str();
}

std::vector<GridAxis> parse_grid(const std::string& spec) {
  std::vector<GridAxis> axes;
  std::istringstream in(spec);
  std::string part;
  while (std::getline(in, part, ';')) {
    if (part.empty()) continue;
    const auto eq = part.find('=');
    if (eq == std::string::npos || eq == 0 || eq + 1 == part.size()) {
      throw ConfigError("grid axis '" + part + "' must look like key=v1,v2");
    }
    GridAxis axis{part.substr(0, eq), {}};
    if (axis.key == "T") axis.key = "regions";
    std::istringstream values(part.substr(eq + 1));
    std::string value;
    while (std::getline(values, value, ',')) {
      if (value.empty()) throw ConfigError("grid axis '" + part + "' has an empty value");
      axis.values.push_back(value);
    }
    axes.push_back(std::move(axis));
  }
  if (axes.empty()) throw ConfigError("empty ablation grid");
  return axes;
}

std::vector<AblationRow> cmd_ablate(const RunConfig& base, const std::string& grid, const std::vector<std::uint64_t>& seeds,
                                    const data::Dataset& dataset,
                                    const std::function<void(const std::string&)>& progress) {
  if (seeds.empty()) throw ConfigError("cmd_ablate: at least one seed is required");
  check_compatible(base, dataset);
  const std::vector<GridAxis> axes = parse_grid(grid);
  // Parse every point before training anything so typos fail fast.
  std::vector<std::pair<AblationRow, std::vector<RunConfig>>> points;
  for (const GridAxis& axis : axes) {
    for (const std::string& value : axis.values) {
      const RunConfig point = with_value(base, axis.key, value);
      point.validate();
      std::vector<RunConfig> runs;
      for (std::uint64_t seed : seeds) {
        RunConfig run = point;
        run.seed = seed;
        run.eval_every_epoch = false;
        runs.push_back(run);
      }
      points.push_back({AblationRow{axis.key == "regions" ? "T" : axis.key, value, {}, 0.0, 0.0}, runs});
    }
  }

  std::map<std::string, EvalReport> cache;
  std::vector<AblationRow> rows;
  for (auto& [row, runs] : points) {
    for (const RunConfig& run : runs) {
      const std::string key = to_kv(run);
      auto it = cache.find(key);
      if (it == cache.end()) {
        TrainingState state = fresh_state(run, dataset.mean);
        train_on(state, dataset);
        it = cache.emplace(key, evaluate(state.model, dataset.test, worker_count(run.threads))).first;
        if (progress) {
          progress(row.key + "=" + row.value + " seed " + std::to_string(run.seed) + ": concat " +
                   fixed(100.0 * it->second.concat, 2));
        }
      }
      row.runs.push_back(it->second);
    }
    std::vector<double> input;
    std::vector<double> concat;
    for (const EvalReport& r : row.runs) {
      input.push_back(r.input);
      concat.push_back(r.concat);
    }
    row.median_input = median(input);
    row.median_concat = median(concat);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(12) << "axis" << std::setw(12) << "value" << std::right << std::setw(9) << "I"
      << std::setw(9) << "concat"
      << "  per-seed concat\n";
  for (const AblationRow& row : rows) {
    out << std::left << std::setw(12) << row.key << std::setw(12) << row.value << std::right << std::setw(9)
        << fixed(100.0 * row.median_input, 2) << std::setw(9) << fixed(100.0 * row.median_concat, 2) << " ";
    for (const EvalReport& r : row.runs) out << " " << fixed(100.0 * r.concat, 2);
    out << "\n";
  }
  return out.str();
}

}  // namespace parnet::cli
