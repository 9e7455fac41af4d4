#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"

#include "fpemb/archive.hpp"
#include "fpemb/augment.hpp"
#include "fpemb/common.hpp"
#include "fpemb/config.hpp"
#include "fpemb/dataset.hpp"
#include "fpemb/embedding_io.hpp"
#include "fpemb/evaluate.hpp"
#include "fpemb/synthetic.hpp"
#include "fpemb/trainer.hpp"

namespace {

using fpemb::ErrorKind;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
    case ErrorKind::kParameter:
      return 2;
    case ErrorKind::kInput:
    case ErrorKind::kFormat:
    case ErrorKind::kRange:
    case ErrorKind::kData:
    case ErrorKind::kSplit:
    case ErrorKind::kProtocol:
    case ErrorKind::kLookup:
    case ErrorKind::kEmptyDataset:
      return 3;
    case ErrorKind::kContract:
    case ErrorKind::kNumerical:
      return 1;
  }
  return 1;
}

// Shared --config/--set plumbing plus the optional dataset shortcuts that
// rewrite themselves as overrides so one merge path handles everything.
struct ConfigArgs {
  std::string config_path;
  std::vector<std::string> sets;
  std::string data_root;
  std::string layout;
  int val_impressions = -1;

  void attach(CLI::App* cmd, bool with_data) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--set", sets,
                    "Override a config key, e.g. --set train.epochs=20");
    if (with_data) {
      cmd->add_option("--data", data_root, "Dataset root directory");
      cmd->add_option("--layout", layout,
                      "Dataset layout: fvc, molf, flat, synthetic");
      cmd->add_option("--val", val_impressions,
                      "Impressions per finger held out for validation");
    }
  }

  fpemb::AppConfig load() const {
    std::vector<std::pair<std::string, std::string>> overrides;
    for (const std::string& s : sets) {
      auto eq = s.find('=');
      FPEMB_CHECK(eq != std::string::npos && eq > 0, ErrorKind::kConfig,
                  "--set expects key=value, got '" + s + "'");
      overrides.emplace_back(s.substr(0, eq), s.substr(eq + 1));
    }
    if (!data_root.empty()) overrides.emplace_back("data.root", data_root);
    if (!layout.empty()) overrides.emplace_back("data.layout", layout);
    if (val_impressions >= 0)
      overrides.emplace_back("data.val_impressions",
                             std::to_string(val_impressions));
    return fpemb::load_app_config(config_path, overrides);
  }
};

int cmd_train(const ConfigArgs& args, const std::string& checkpoint_dir) {
  fpemb::AppConfig config = args.load();
  if (!checkpoint_dir.empty()) config.train.checkpoint_dir = checkpoint_dir;
  fpemb::DatasetIndex full = fpemb::dataset_from_config(config);
  auto [train_index, val_index] =
      fpemb::split_train_val(full, config.data.val_impressions);
  std::cout << "training on " << train_index.records.size() << " images, "
            << val_index.records.size() << " validation images, "
            << full.class_count << " classes\n";
  fpemb::Pipeline pipeline(config.model, config.train, config.augment);
  fpemb::TrainResult result = pipeline.train(train_index, val_index);
  const fpemb::EpochRecord& last = result.history.back();
  std::cout << "finished " << result.history.size() << " epochs, "
            << result.steps << " steps\n";
  std::cout << "final train loss " << last.train_l_all << "\n";
  if (last.has_val) {
    std::cout << "final val loss " << last.val.l_all << " (best epoch "
              << result.best_epoch << ")\n";
  }
  std::cout << "checkpoints: " << result.best_checkpoint << " "
            << result.last_checkpoint << "\n";
  return 0;
}

int cmd_extract(const ConfigArgs& args, const std::string& checkpoint,
                const std::string& out_path) {
  fpemb::AppConfig config = args.load();
  std::unique_ptr<fpemb::Pipeline> pipeline = fpemb::Pipeline::load(checkpoint);
  fpemb::DatasetIndex index = fpemb::dataset_from_config(config);
  fpemb::EmbeddingStore store;
  std::size_t skipped = 0;
  for (const fpemb::DatasetRecord& rec : index.records) {
    try {
      store.add(rec.image_id, pipeline->embed_record(index, rec).values);
    } catch (const fpemb::Error& e) {
      std::cerr << "skipping " << rec.image_id << ": " << e.what() << "\n";
      ++skipped;
    }
  }
  FPEMB_CHECK(!store.ids.empty(), ErrorKind::kEmptyDataset,
              "no embeddings could be extracted");
  fpemb::write_embedding_file(store, out_path);
  std::cout << "wrote " << store.ids.size() << " embeddings (dim " << store.dim
            << ") to " << out_path << "\n";
  if (skipped > 0) {
    std::cerr << skipped << " records skipped\n";
    return 4;
  }
  return 0;
}

int cmd_match(const std::string& embeddings_path, const std::string& id_a,
              const std::string& id_b) {
  fpemb::EmbeddingStore store = fpemb::read_embedding_file(embeddings_path);
  const int ia = store.find(id_a);
  FPEMB_CHECK(ia >= 0, ErrorKind::kLookup, "no embedding for id: " + id_a);
  const int ib = store.find(id_b);
  FPEMB_CHECK(ib >= 0, ErrorKind::kLookup, "no embedding for id: " + id_b);
  const double score = fpemb::match_score(store.row(ia), store.row(ib));
  std::printf("%.6f\n", score);
  return 0;
}

int cmd_eval(const ConfigArgs& args, const std::string& embeddings_path,
             const std::string& protocol_name, const std::string& out_dir) {
  fpemb::AppConfig config = args.load();
  std::string protocol = protocol_name.empty() ? config.eval.protocol
                                               : protocol_name;
  fpemb::PairProtocol proto = fpemb::pair_protocol_from_name(protocol);
  fpemb::DatasetIndex index = fpemb::dataset_from_config(config);
  fpemb::EmbeddingStore store = fpemb::read_embedding_file(embeddings_path);

  std::vector<std::string> missing;
  for (const fpemb::DatasetRecord& rec : index.records)
    if (store.find(rec.image_id) < 0) missing.push_back(rec.image_id);
  if (!missing.empty()) {
    std::cerr << "embeddings missing for " << missing.size() << " of "
              << index.records.size() << " records:\n";
    for (const std::string& id : missing) std::cerr << "  " << id << "\n";
    return 4;
  }

  std::vector<fpemb::ScoredPair> scores;
  fpemb::EvalReport report =
      fpemb::evaluate_dataset(index, store, proto, &scores);
  std::printf("EER: %.2f%% at threshold %.6f\n", 100.0 * report.eer,
              report.eer_threshold);
  std::cout << report.genuine_count << " genuine pairs, "
            << report.impostor_count << " impostor pairs ("
            << protocol << ")\n";
  if (!out_dir.empty()) {
    fpemb::write_eval_report(report, out_dir);
    fpemb::write_scores_csv(
        scores, (std::filesystem::path(out_dir) / "scores.csv").string());
    std::cout << "report written to " << out_dir << "\n";
  }
  return 0;
}

int cmd_synth(const ConfigArgs& args, const std::string& out_dir, int fingers,
              int impressions, int count, std::uint64_t seed) {
  fpemb::AppConfig config = args.load();
  if (count > 0) {
    fingers = count;
    impressions = 1;
  }
  FPEMB_CHECK(fingers > 0 && impressions > 0, ErrorKind::kParameter,
              "need positive --fingers and --impressions (or --count)");
  fpemb::DatasetIndex index =
      fpemb::make_synthetic_index(fingers, impressions, seed, config.synth);
  std::filesystem::create_directories(out_dir);
  for (const fpemb::DatasetRecord& rec : index.records) {
    fpemb::FingerprintImage img = fpemb::load_record_image(index, rec);
    fpemb::MinutiaSet minutiae = fpemb::load_record_minutiae(index, rec);
    // <label>_<impression> stems, the naming the flat/fvc layouts index.
    const std::string stem =
        rec.label + "_" + std::to_string(rec.impression_id);
    const std::filesystem::path base = std::filesystem::path(out_dir) / stem;
    fpemb::write_pgm(img, base.string() + ".pgm");
    fpemb::write_minutiae_file(minutiae, base.string() + ".min");
  }
  std::cout << "wrote " << index.records.size() << " images ("
            << fingers << " fingers x " << impressions
            << " impressions) to " << out_dir << "\n";
  return 0;
}

int cmd_augment_preview(const ConfigArgs& args, const std::string& image_path,
                        const std::string& out_dir, std::uint64_t seed) {
  fpemb::AppConfig config = args.load();
  fpemb::validate_augment_config(config.augment);
  fpemb::FingerprintImage original(1, 1);
  if (!image_path.empty()) {
    original = fpemb::read_pgm(image_path);
  } else {
    original =
        fpemb::generate_synthetic_fingerprint(seed, config.synth).first;
  }
  std::filesystem::create_directories(out_dir);
  auto path_for = [&](const char* name) {
    return (std::filesystem::path(out_dir) / (std::string(name) + ".pgm"))
        .string();
  };
  fpemb::write_pgm(original, path_for("a_original"));
  {
    fpemb::Rng rng(fpemb::Rng::mix(seed, 1));
    fpemb::write_pgm(fpemb::random_contrast(original, rng, config.augment),
                     path_for("b_contrast"));
  }
  {
    fpemb::Rng rng(fpemb::Rng::mix(seed, 2));
    fpemb::write_pgm(fpemb::random_noise(original, rng, config.augment),
                     path_for("c_noise"));
  }
  {
    fpemb::Rng rng(fpemb::Rng::mix(seed, 3));
    fpemb::write_pgm(fpemb::random_morphology(original, rng, config.augment),
                     path_for("d_morphology"));
  }
  {
    fpemb::Rng rng(fpemb::Rng::mix(seed, 4));
    fpemb::DeformationField field = fpemb::make_deformation_field(
        original.height, original.width, rng, config.augment);
    fpemb::write_pgm(
        fpemb::apply_deformation(original, fpemb::MinutiaSet{}, field).first,
        path_for("e_deformation"));
  }
  std::cout << "wrote 5 stage images to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Fingerprint embedding toolkit"};
  app.require_subcommand(1);

  ConfigArgs train_args, extract_args, eval_args, synth_args, preview_args;
  std::string checkpoint_dir, checkpoint, out_path, out_dir;
  std::string embeddings_path, id_a, id_b, protocol, image_path;
  int fingers = 0, impressions = 1, count = 0;
  std::uint64_t seed = 1;

  CLI::App* train = app.add_subcommand("train", "Train the embedding network");
  train_args.attach(train, true);
  train->add_option("--checkpoint-dir", checkpoint_dir,
                    "Directory for checkpoints and logs");

  CLI::App* extract =
      app.add_subcommand("extract", "Extract embeddings for a dataset");
  extract_args.attach(extract, true);
  extract->add_option("--checkpoint", checkpoint, "Pipeline checkpoint")
      ->required();
  extract->add_option("--out", out_path, "Output embedding file")->required();

  CLI::App* match =
      app.add_subcommand("match", "Score two embeddings by image id");
  match->add_option("--embeddings", embeddings_path, "Embedding file")
      ->required();
  match->add_option("--a", id_a, "First image id")->required();
  match->add_option("--b", id_b, "Second image id")->required();

  CLI::App* eval = app.add_subcommand("eval", "Compute the EER for a dataset");
  eval_args.attach(eval, true);
  eval->add_option("--embeddings", embeddings_path, "Embedding file")
      ->required();
  eval->add_option("--protocol", protocol,
                   "Pairing protocol: fvc_standard or all_pairs");
  eval->add_option("--out", out_dir, "Directory for report files");

  CLI::App* synth =
      app.add_subcommand("synth", "Generate synthetic fingerprints");
  synth_args.attach(synth, false);
  synth->add_option("--out", out_dir, "Output directory")->required();
  synth->add_option("--fingers", fingers, "Number of fingers");
  synth->add_option("--impressions", impressions, "Impressions per finger");
  synth->add_option("--count", count,
                    "Shorthand for --fingers N --impressions 1");
  synth->add_option("--seed", seed, "Base seed");

  CLI::App* preview = app.add_subcommand(
      "augment-preview", "Write each augmentation stage as an image");
  preview_args.attach(preview, false);
  preview->add_option("--image", image_path,
                      "Input PGM (synthetic when omitted)");
  preview->add_option("--out", out_dir, "Output directory")->required();
  preview->add_option("--seed", seed, "Seed for the stage draws");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (train->parsed()) return cmd_train(train_args, checkpoint_dir);
    if (extract->parsed())
      return cmd_extract(extract_args, checkpoint, out_path);
    if (match->parsed()) return cmd_match(embeddings_path, id_a, id_b);
    if (eval->parsed())
      return cmd_eval(eval_args, embeddings_path, protocol, out_dir);
    if (synth->parsed())
      return cmd_synth(synth_args, out_dir, fingers, impressions, count, seed);
    if (preview->parsed())
      return cmd_augment_preview(preview_args, image_path, out_dir, seed);
  } catch (const fpemb::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
