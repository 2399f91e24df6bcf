#include <iostream>
#include <string>
#include <thread>

#include "CLI11.hpp"
#include "commands.hpp"
#include "pan/errors.hpp"

namespace {

constexpr int kUsage = 2;
constexpr int kData = 3;
constexpr int kDivergence = 4;

int fail(int code, std::string message) {
  for (char& c : message) {
    if (c == '\n') c = ' ';
  }
  std::cerr << "pan: error: " << message << "\n";
  return code;
}

std::size_t default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace

int main(int argc, char** argv) {
  using namespace pan::cli;
  CLI::App app{"Pose-aligned retrieval toolkit"};
  app.set_version_flag("--version", std::string("pan ") + PAN_VERSION);
  app.require_subcommand(1);

  GenOptions gen;
  auto* g = app.add_subcommand("gen", "Generate a synthetic corpus");
  g->add_option("--spec", gen.spec, "Corpus spec JSON")->check(CLI::ExistingFile);
  g->add_option("--out", gen.out, "Output directory")->required();
  g->add_option("--seed", gen.seed, "Override the spec seed");

  TrainOptions train;
  auto* t = app.add_subcommand("train", "Train the network");
  t->add_option("--corpus", train.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  t->add_option("--out", train.out, "Run directory")->required();
  t->add_option("--stage", train.stage, "1, 2 or both");
  t->add_option("--config", train.config, "Network/training config JSON")->check(CLI::ExistingFile);
  t->add_option("--init", train.init, "Stage-1 checkpoint for --stage 2")->check(CLI::ExistingFile);
  t->add_option("--epochs", train.epochs, "Epochs per stage");
  t->add_option("--decay-epoch", train.decay_epoch, "Last epoch before the learning-rate decay");
  t->add_option("--lr", train.lr, "Learning rate");
  t->add_option("--lr-theta", train.lr_theta, "Learning rate of the affine regression layer");
  t->add_option("--batch-size", train.batch_size, "Mini-batch size");
  t->add_option("--seed", train.seed, "Run seed");
  t->add_flag("--quiet", train.quiet, "Do not echo the epoch log");

  EmbedOptions embed;
  embed.threads = default_threads();
  auto* e = app.add_subcommand("embed", "Compute per-branch embeddings");
  e->add_option("--ckpt", embed.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  e->add_option("--corpus", embed.corpus, "Corpus directory")->required()->check(CLI::ExistingDirectory);
  e->add_option("--split", embed.split, "q, g or train")->required();
  e->add_option("--out", embed.out, "Embedding file")->required();
  e->add_option("--threads", embed.threads, "Worker threads");

  RankOptions rank;
  rank.threads = default_threads();
  auto* r = app.add_subcommand("rank", "Rank a gallery for each query");
  r->add_option("--query", rank.query, "Query embeddings")->required()->check(CLI::ExistingFile);
  r->add_option("--gallery", rank.gallery, "Gallery embeddings")->required()->check(CLI::ExistingFile);
  r->add_option("--out", rank.out, "Output directory")->required();
  r->add_option("--alpha", rank.alpha, "Fusion weight of the base branch");
  r->add_flag("--rerank", rank.rerank, "Apply k-reciprocal re-ranking");
  r->add_option("--k", rank.k, "Re-ranking neighbourhood size");
  r->add_option("--lambda", rank.lambda, "Weight of the Jaccard term");
  r->add_flag("--all-cameras", rank.all_cameras, "Keep same-camera matches");
  r->add_option("--list-length", rank.list_length, "Entries kept per rank list");
  r->add_option("--threads", rank.threads, "Worker threads");

  EvalOptions eval;
  eval.threads = default_threads();
  auto* v = app.add_subcommand("eval", "Score a rank directory");
  v->add_option("--ranks", eval.ranks, "Rank directory")->required()->check(CLI::ExistingDirectory);
  v->add_option("--out", eval.out, "Report JSON")->required();
  v->add_option("--alpha-sweep", eval.alpha_sweep, "lo:hi:step, e.g. 0:1:0.1");
  v->add_option("--use", eval.use, "auto, plain or reranked distances");
  v->add_option("--threads", eval.threads, "Worker threads");

  VisualizeOptions vis;
  auto* z = app.add_subcommand("visualize", "Write original/aligned image pairs");
  z->add_option("--ckpt", vis.ckpt, "Checkpoint")->required()->check(CLI::ExistingFile);
  z->add_option("--images", vis.images, "Image directory")->required()->check(CLI::ExistingDirectory);
  z->add_option("--out", vis.out, "Output directory")->required();
  z->add_option("--limit", vis.limit, "Maximum number of images, 0 for all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& s) {
    return app.exit(s);
  } catch (const CLI::ParseError& err) {
    return fail(kUsage, err.what());
  }

  try {
    if (*g) cmd_gen(gen);
    if (*t) cmd_train(train);
    if (*e) cmd_embed(embed);
    if (*r) cmd_rank(rank);
    if (*v) cmd_eval(eval);
    if (*z) cmd_visualize(vis);
  } catch (const pan::NumericDivergence& err) {
    return fail(kDivergence, err.what());
  } catch (const pan::InvalidArgument& err) {
    return fail(kUsage, err.what());
  } catch (const pan::Error& err) {
    return fail(kData, err.what());
  } catch (const std::filesystem::filesystem_error& err) {
    return fail(kData, err.what());
  } catch (const std::exception& err) {
    return fail(1, err.what());
  }
  return 0;
}
