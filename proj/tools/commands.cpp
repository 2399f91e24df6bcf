#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <sstream>

#include "pan/corpus.hpp"
#include "pan/descriptor.hpp"
#include "pan/errors.hpp"
#include "pan/image_io.hpp"
#include "pan/io_util.hpp"
#include "pan/metrics.hpp"
#include "pan/network.hpp"
#include "pan/retrieval.hpp"
#include "pan/training.hpp"

namespace pan::cli {

namespace {

using nlohmann::json;

json read_json(const fs::path& path) {
  const std::string text = read_file(path);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": invalid JSON: " + e.what());
  }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, dump(j)); }

void write_lines(const fs::path& path, const std::vector<json>& rows) {
  std::string text;
  for (const auto& r : rows) text += r.dump() + "\n";
  write_file_atomic(path, text);
}

std::vector<json> read_lines(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<json> rows;
  std::string line;
  for (std::size_t n = 1; std::getline(in, line); ++n) {
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(n) + ": invalid JSON: " + e.what());
    }
  }
  return rows;
}

Split split_from_flag(const std::string& text) {
  if (text == "q" || text == "query") return Split::query;
  if (text == "g" || text == "gallery") return Split::gallery;
  if (text == "train") return Split::train;
  throw InvalidArgument("--split must be q, g or train, got \"" + text + "\"");
}

json meta_json(const SampleMeta& m) {
  return {{"sample_id", m.sample_id}, {"identity", m.identity}, {"camera", m.camera}};
}

std::vector<SampleMeta> read_metas(const fs::path& path) {
  std::vector<SampleMeta> out;
  std::size_t n = 0;
  for (const auto& row : read_lines(path)) {
    ++n;
    try {
      out.push_back({row.at("sample_id").get<std::uint32_t>(), row.at("identity").get<std::uint32_t>(),
                     row.at("camera").get<std::uint16_t>()});
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": row " + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

// Fused descriptors of both sides, ready for ranking.
struct Sides {
  std::vector<Descriptor> query;
  std::vector<Descriptor> gallery;
};

Sides fuse_sides(const EmbeddingFile& q, const EmbeddingFile& g, double alpha) {
  return {q.fused(alpha), g.fused(alpha)};
}

DistanceMatrix reranked(const Sides& s, std::size_t k, double lambda, std::size_t threads) {
  const auto joint = joint_distance(s.query, s.gallery, threads);
  return query_gallery_block(rerank(joint, k, lambda, threads), s.query.size());
}

struct RankSettings {
  double alpha = 0.5;
  bool rerank = false;
  std::size_t k = 20;
  double lambda = 1.0;
  bool cross_camera = true;
  fs::path query;
  fs::path gallery;
};

json to_json(const RankSettings& s) {
  return {{"alpha", s.alpha},       {"rerank", s.rerank}, {"k", s.k},
          {"lambda", s.lambda},     {"cross_camera_only", s.cross_camera},
          {"query", s.query.string()}, {"gallery", s.gallery.string()}};
}

std::vector<double> parse_sweep(const std::string& text) {
  std::vector<double> parts;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ':')) {
    try {
      std::size_t used = 0;
      parts.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidArgument("--alpha-sweep: \"" + text + "\" is not lo:hi:step");
    }
  }
  if (parts.size() != 3 || parts[2] <= 0.0 || parts[0] > parts[1] || parts[0] < 0.0 || parts[1] > 1.0) {
    throw InvalidArgument("--alpha-sweep: \"" + text + "\" must be lo:hi:step with 0 <= lo <= hi <= 1, step > 0");
  }
  std::vector<double> alphas;
  const auto steps = static_cast<long>(std::floor((parts[1] - parts[0]) / parts[2] + 1e-9));
  for (long i = 0; i <= steps; ++i) alphas.push_back(std::min(parts[1], parts[0] + i * parts[2]));
  return alphas;
}

}  // namespace

void write_run_config(const fs::path& dir, const std::string& command, const json& settings) {
  write_json(dir / "run_config.json",
             {{"tool", "pan"}, {"version", PAN_VERSION}, {"command", command}, {"settings", settings}});
}

void cmd_gen(const GenOptions& o) {
  GenSpec spec;
  if (!o.spec.empty()) {
    try {
      spec = read_json(o.spec).get<GenSpec>();
    } catch (const json::exception& e) {
      throw DataError(o.spec.string() + ": " + e.what());
    }
  }
  if (o.seed) spec.seed = *o.seed;
  spec.validate();
  const Corpus corpus = generate(spec, o.out);
  write_run_config(o.out, "gen", json(spec));
  std::cerr << "pan gen: " << corpus.samples.size() << " images in " << o.out.string() << "\n";
}

void cmd_train(const TrainOptions& o) {
  if (o.stage != "1" && o.stage != "2" && o.stage != "both") {
    throw InvalidArgument("--stage must be 1, 2 or both, got \"" + o.stage + "\"");
  }
  if (o.stage == "2" && o.init.empty()) throw InvalidArgument("--stage 2 needs --init <stage-1 checkpoint>");

  const Corpus corpus = load_corpus(o.corpus);
  const TrainingSet data = corpus.training_set();
  if (data.images.empty()) throw DataError(o.corpus.string() + ": no training images");

  PanConfig config;
  if (!o.config.empty()) {
    try {
      config = read_json(o.config).get<PanConfig>();
    } catch (const json::exception& e) {
      throw DataError(o.config.string() + ": " + e.what());
    }
  }
  const Tensor& first = data.images.front();
  config.input_channels = first.dim(0);
  config.input_h = first.dim(1);
  config.input_w = first.dim(2);
  config.num_classes = corpus.num_train_identities();
  if (o.epochs) config.total_epochs = *o.epochs;
  if (o.decay_epoch) config.lr_decay_epoch = *o.decay_epoch;
  if (o.lr) config.lr_main = *o.lr;
  if (o.lr_theta) config.lr_theta_layer = *o.lr_theta;
  if (o.batch_size) config.batch_size = *o.batch_size;
  if (o.seed) config.seed = *o.seed;
  config.validate();

  PanModel model = o.stage == "2" ? PanModel::load(o.init, config) : PanModel(config);
  if (o.stage == "2") {
    const PanConfig& loaded = model.config();
    if (loaded.num_classes != config.num_classes) {
      throw DataError(o.init.string() + ": checkpoint has " + std::to_string(loaded.num_classes) +
                      " classes, corpus has " + std::to_string(config.num_classes));
    }
    config.base_channels = loaded.base_channels;
    config.align_channels = loaded.align_channels;
    config.grid_channels = loaded.grid_channels;
  }

  fs::create_directories(o.out);
  write_run_config(o.out, "train",
                   {{"corpus", o.corpus.string()},
                    {"stage", o.stage},
                    {"init", o.init.string()},
                    {"config", json(config)}});

  std::vector<json> log;
  const EpochCallback on_epoch = [&](const EpochRecord& r) {
    log.push_back(to_json(r));
    write_lines(o.out / "train_log.jsonl", log);
    if (!o.quiet) std::cerr << log.back().dump() << "\n";
  };

  if (o.stage != "2") {
    train_stage1(model, data, config, on_epoch);
    if (o.stage == "both") model.save(o.out / "stage1.panw");
  }
  if (o.stage != "1") {
    const TrainTrace trace = train_stage2(model, data, config, on_epoch);
    if (trace.theta) {
      write_json(o.out / "theta_stats.json",
                 {{"mean", trace.theta->mean}, {"stddev", trace.theta->stddev}});
    }
  }
  model.save(o.out / "model.panw");
}

void cmd_embed(const EmbedOptions& o) {
  const Split split = split_from_flag(o.split);
  const PanModel model = PanModel::load(o.ckpt);
  const Corpus corpus = load_corpus(o.corpus);
  const auto samples = corpus.split(split);
  if (samples.empty()) throw DataError(o.corpus.string() + ": split " + to_string(split) + " is empty");

  std::vector<Tensor> images;
  images.reserve(samples.size());
  for (const auto* s : samples) images.push_back(s->image);
  std::vector<Embedding> emb(images.size());
  parallel_rows(images.size(), std::max<std::size_t>(1, o.threads), [&](std::size_t begin, std::size_t end) {
    auto part = model.embed_batch(std::span<const Tensor>(images).subspan(begin, end - begin));
    std::move(part.begin(), part.end(), emb.begin() + static_cast<long>(begin));
  });

  EmbeddingFile file;
  file.dim1 = static_cast<std::uint32_t>(emb.front().base.size());
  file.dim2 = static_cast<std::uint32_t>(emb.front().align.size());
  std::vector<json> manifest;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto* s = samples[i];
    BranchRecord r;
    r.meta = {s->sample_id, s->identity, s->camera};
    r.branch1.assign(emb[i].base.begin(), emb[i].base.end());
    r.branch2.assign(emb[i].align.begin(), emb[i].align.end());
    file.records.push_back(std::move(r));
    manifest.push_back({{"sample_id", s->sample_id}, {"path", s->path}});
  }
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  save_embeddings(o.out, file);
  write_lines(o.out.string() + ".manifest.jsonl", manifest);
  write_json(o.out.string() + ".run_config.json",
             {{"tool", "pan"},
              {"version", PAN_VERSION},
              {"command", "embed"},
              {"settings",
               {{"ckpt", o.ckpt.string()}, {"corpus", o.corpus.string()}, {"split", to_string(split)}}}});
}

void cmd_rank(const RankOptions& o) {
  if (!(o.alpha >= 0.0 && o.alpha <= 1.0)) throw InvalidArgument("--alpha must lie in [0, 1]");
  const EmbeddingFile q = load_embeddings(o.query);
  const EmbeddingFile g = load_embeddings(o.gallery);
  if (q.dim1 != g.dim1 || q.dim2 != g.dim2) {
    throw DataError(o.gallery.string() + ": branch sizes " + std::to_string(g.dim1) + "+" +
                    std::to_string(g.dim2) + " differ from " + o.query.string());
  }
  RankSettings settings{o.alpha, o.rerank, o.k, o.lambda, !o.all_cameras, fs::absolute(o.query),
                        fs::absolute(o.gallery)};
  const std::size_t threads = std::max<std::size_t>(1, o.threads);
  const Sides sides = fuse_sides(q, g, o.alpha);

  fs::create_directories(o.out);
  const auto plain = pairwise_sqdist(sides.query, sides.gallery, threads);
  save_distances(o.out / "distances.pand", plain);
  const DistanceMatrix* used = &plain;
  DistanceMatrix rr;
  if (o.rerank) {
    rr = reranked(sides, o.k, o.lambda, threads);
    save_distances(o.out / "reranked.pand", rr);
    used = &rr;
  }

  const auto qm = q.metas();
  const auto gm = g.metas();
  std::vector<json> qrows, grows, lists;
  for (const auto& m : qm) qrows.push_back(meta_json(m));
  for (const auto& m : gm) grows.push_back(meta_json(m));
  for (const auto& l : rank(*used, qm, gm, settings.cross_camera)) {
    json ids = json::array();
    for (std::size_t i = 0; i < std::min(o.list_length, l.entries.size()); ++i) {
      ids.push_back(gm[l.entries[i].gallery_index].sample_id);
    }
    lists.push_back({{"query", qm[l.query_index].sample_id}, {"gallery", ids}});
  }
  write_lines(o.out / "query_meta.jsonl", qrows);
  write_lines(o.out / "gallery_meta.jsonl", grows);
  write_lines(o.out / "rank_lists.jsonl", lists);
  write_run_config(o.out, "rank", to_json(settings));
}

void cmd_eval(const EvalOptions& o) {
  if (o.use != "auto" && o.use != "plain" && o.use != "reranked") {
    throw InvalidArgument("--use must be auto, plain or reranked, got \"" + o.use + "\"");
  }
  const auto qm = read_metas(o.ranks / "query_meta.jsonl");
  const auto gm = read_metas(o.ranks / "gallery_meta.jsonl");
  const fs::path rr_path = o.ranks / "reranked.pand";
  fs::path dist_path = o.ranks / "distances.pand";
  if (o.use == "reranked" || (o.use == "auto" && fs::exists(rr_path))) dist_path = rr_path;
  const DistanceMatrix dist = load_distances(dist_path);
  if (dist.n_query != qm.size() || dist.n_gallery != gm.size()) {
    throw DataError(dist_path.string() + ": " + std::to_string(dist.n_query) + "x" +
                    std::to_string(dist.n_gallery) + " does not match the metadata (" +
                    std::to_string(qm.size()) + "x" + std::to_string(gm.size()) + ")");
  }

  // Settings default to the protocol used by `pan rank` when no record exists.
  RankSettings settings;
  const fs::path cfg_path = o.ranks / "run_config.json";
  const bool have_cfg = fs::exists(cfg_path);
  if (have_cfg) {
    try {
      const json s = read_json(cfg_path).at("settings");
      settings.alpha = s.at("alpha").get<double>();
      settings.rerank = s.at("rerank").get<bool>();
      settings.k = s.at("k").get<std::size_t>();
      settings.lambda = s.at("lambda").get<double>();
      settings.cross_camera = s.at("cross_camera_only").get<bool>();
      settings.query = s.at("query").get<std::string>();
      settings.gallery = s.at("gallery").get<std::string>();
    } catch (const json::exception& e) {
      throw DataError(cfg_path.string() + ": " + e.what());
    }
  }

  const EvalReport report = evaluate(dist, qm, gm, settings.cross_camera);
  if (o.out.has_parent_path()) fs::create_directories(o.out.parent_path());
  write_json(o.out, report.to_json());
  fs::path csv = o.out;
  csv.replace_extension(".cmc.csv");
  write_file_atomic(csv, report.cmc_csv());

  if (o.alpha_sweep.empty()) return;
  const auto alphas = parse_sweep(o.alpha_sweep);
  if (!have_cfg) throw DataError(cfg_path.string() + ": missing; --alpha-sweep needs the embeddings it names");
  const EmbeddingFile q = load_embeddings(settings.query);
  const EmbeddingFile g = load_embeddings(settings.gallery);
  const bool rerank_sweep = dist_path == rr_path;
  const std::size_t threads = std::max<std::size_t>(1, o.threads);
  json rows = json::array();
  std::ostringstream table;
  table.precision(17);
  table << "alpha,rank1,rank5,rank10,rank20,mAP\n";
  for (double a : alphas) {
    const Sides sides = fuse_sides(q, g, a);
    const DistanceMatrix d = rerank_sweep ? reranked(sides, settings.k, settings.lambda, threads)
                                          : pairwise_sqdist(sides.query, sides.gallery, threads);
    const EvalReport r = evaluate(d, q.metas(), g.metas(), settings.cross_camera);
    rows.push_back({{"alpha", a}, {"reranked", rerank_sweep}, {"report", r.to_json()}});
    table << a << "," << r.rank_accuracy.at(1) << "," << r.rank_accuracy.at(5) << ","
          << r.rank_accuracy.at(10) << "," << r.rank_accuracy.at(20) << "," << r.mean_ap << "\n";
  }
  fs::path stem = o.out;
  stem.replace_extension();
  write_json(stem.string() + ".alpha_sweep.json", rows);
  write_file_atomic(stem.string() + ".alpha_sweep.csv", table.str());
}

void cmd_visualize(const VisualizeOptions& o) {
  const PanModel model = PanModel::load(o.ckpt);
  if (!fs::is_directory(o.images)) throw IoError(o.images.string() + ": not a directory");
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(o.images)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (o.limit > 0 && files.size() > o.limit) files.resize(o.limit);
  if (files.empty()) throw DataError(o.images.string() + ": no PNG images");

  fs::create_directories(o.out);
  const auto& c = model.config();
  std::vector<json> thetas;
  for (const auto& file : files) {
    const Tensor image = read_png(file);
    if (image.shape() != Shape{c.input_channels, c.input_h, c.input_w}) {
      throw InvalidShape(file.string() + ": image " + to_string(image.shape()) + " does not match the model input");
    }
    const AffineParams theta = model.embed(image).theta;
    const Tensor aligned = apply_affine_to_image(image, theta, c.input_h, c.input_w);
    std::string name = fs::relative(file, o.images).generic_string();
    std::replace(name.begin(), name.end(), '/', '_');
    write_png(o.out / name, side_by_side(image, aligned));
    thetas.push_back({{"image", name}, {"theta", theta.theta}});
  }
  write_lines(o.out / "thetas.jsonl", thetas);
  write_run_config(o.out, "visualize",
                   {{"ckpt", o.ckpt.string()}, {"images", o.images.string()}, {"limit", o.limit}});
}

}  // namespace pan::cli
