// graphdiff: 2D-to-3D pose lifting with a graph-structured diffusion model.

#include <graphdiff/graphdiff.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

constexpr int kExitUsage = 64;
constexpr int kExitConfig = 65;
constexpr int kExitIo = 66;
constexpr int kExitMismatch = 67;
constexpr int kExitInternal = 70;

int env_num_workers() {
    const char* v = std::getenv("GRAPHDIFF_NUM_WORKERS");
    if (!v || !*v) return 0;
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (*end != '\0' || n < 0)
        throw std::invalid_argument("GRAPHDIFF_NUM_WORKERS must be a non-negative integer");
    return static_cast<int>(n);
}

void echo_config(const graphdiff::RunConfig& rc) {
    std::cout << "resolved config:\n" << rc.resolved.dump(2) << "\n";
}

const std::vector<graphdiff::PoseItem>& split_or_throw(const graphdiff::PoseDataset& ds,
                                                       const std::string& split) {
    auto it = ds.splits.find(split);
    if (it == ds.splits.end())
        throw graphdiff::MismatchError("dataset has no split '" + split + "'");
    return it->second;
}

void check_joints(const graphdiff::DenoiserModel& model, const graphdiff::PoseDataset& ds) {
    if (model.config().skeleton.num_joints != ds.num_joints)
        throw graphdiff::MismatchError(
            "joint count mismatch: model has " +
            std::to_string(model.config().skeleton.num_joints) + ", dataset has " +
            std::to_string(ds.num_joints));
}

int cmd_synth(const graphdiff::RunConfig& rc, const std::string& out_dir) {
    echo_config(rc);
    graphdiff::PoseDataset ds = graphdiff::synth_toy_dataset(rc.synth);
    graphdiff::save_dataset(out_dir, ds);
    std::cout << "dataset written to " << out_dir << "\n";
    for (const auto& [name, items] : ds.splits)
        std::cout << "  " << name << ": " << items.size() << " items\n";
    return 0;
}

int cmd_train(const graphdiff::RunConfig& rc, const std::string& data_dir,
              const std::string& split, const std::string& out_dir) {
    echo_config(rc);
    graphdiff::PoseDataset ds = graphdiff::load_dataset(data_dir);
    graphdiff::DenoiserModel model(rc.model);
    check_joints(model, ds);
    model.init_params(rc.seed);
    const auto pairs = graphdiff::make_training_pairs(split_or_throw(ds, split), ds.norm);
    if (pairs.empty()) throw graphdiff::MismatchError("split '" + split + "' has no usable items");
    std::cout << "training on " << pairs.size() << " items\n";

    auto history = graphdiff::train(model, pairs, rc.train, [](const graphdiff::EpochMetrics& m) {
        std::cout << "epoch " << m.epoch << " loss " << m.mean_loss << " (eps " << m.mean_eps_term
                  << ", recon " << m.mean_recon_term << ") lr " << m.lr << "\n";
        return true;
    });

    const int final_epoch = history.empty() ? 0 : history.back().epoch + 1;
    graphdiff::save_checkpoint(std::filesystem::path(out_dir) / "model.gdck", model, rc.schedule,
                               {final_epoch, rc.seed});
    std::ostringstream metrics;
    metrics.precision(17);
    metrics << "epoch,lr,mean_loss,mean_eps_term,mean_recon_term,num_batches,num_flips\n";
    for (const auto& m : history)
        metrics << m.epoch << ',' << m.lr << ',' << m.mean_loss << ',' << m.mean_eps_term << ','
                << m.mean_recon_term << ',' << m.num_batches << ',' << m.num_flips << '\n';
    graphdiff::atomic_write_file(std::filesystem::path(out_dir) / "train_metrics.csv",
                                 metrics.str());
    std::cout << "checkpoint written to " << out_dir << "/model.gdck\n";
    return 0;
}

int cmd_sample(const graphdiff::RunConfig& rc, const std::string& ckpt_path,
               const std::string& data_dir, const std::string& split, const std::string& out_dir,
               int limit) {
    echo_config(rc);
    graphdiff::LoadedCheckpoint ck = graphdiff::load_checkpoint(ckpt_path);
    graphdiff::PoseDataset ds = graphdiff::load_dataset(data_dir);
    check_joints(ck.model, ds);
    const graphdiff::NoiseSchedule schedule = ck.schedule.build();
    const auto& items = split_or_throw(ds, split);
    const std::size_t n =
        limit > 0 ? std::min<std::size_t>(items.size(), static_cast<std::size_t>(limit))
                  : items.size();

    std::ostringstream csv;
    csv.precision(17);
    csv << "item,hypothesis,joint,x_mm,y_mm,z_mm\n";
    const auto t0 = std::chrono::steady_clock::now();
    for (std::size_t i = 0; i < n; ++i) {
        const graphdiff::Detection2D y = graphdiff::normalize_2d(items[i].kp, ds.norm);
        graphdiff::HypothesisSet hs = graphdiff::sample_hypotheses(
            ck.model, y, schedule, rc.sampler, static_cast<std::uint64_t>(i));
        auto emit = [&](int hyp, const graphdiff::Pose3D& pose_norm) {
            const graphdiff::Pose3D mm = graphdiff::denormalize_3d(pose_norm, ds.norm);
            for (Eigen::Index j = 0; j < mm.rows(); ++j)
                csv << i << ',' << hyp << ',' << j << ',' << mm(j, 0) << ',' << mm(j, 1) << ','
                    << mm(j, 2) << '\n';
        };
        for (std::size_t h = 0; h < hs.hypotheses.size(); ++h)
            emit(static_cast<int>(h), hs.hypotheses[h]);
        emit(-1, hs.mean); // aggregated pose
    }
    const std::chrono::duration<double> dt = std::chrono::steady_clock::now() - t0;
    graphdiff::atomic_write_file(std::filesystem::path(out_dir) / "poses.csv", csv.str());
    std::cout << "sampled " << n << " items (" << rc.sampler.num_hypotheses << " hypotheses each) in "
              << dt.count() << " s\n";
    std::cout << "poses written to " << out_dir << "/poses.csv\n";
    return 0;
}

int cmd_eval(const graphdiff::RunConfig& rc, const std::string& ckpt_path,
             const std::string& data_dir, const std::string& split,
             const std::optional<std::string>& out_dir, bool gt_oracle) {
    echo_config(rc);
    graphdiff::LoadedCheckpoint ck = graphdiff::load_checkpoint(ckpt_path);
    graphdiff::PoseDataset ds = graphdiff::load_dataset(data_dir);
    check_joints(ck.model, ds);
    const graphdiff::NoiseSchedule schedule = ck.schedule.build();
    const auto eval_items = graphdiff::make_eval_items(split_or_throw(ds, split), ds.norm);
    if (eval_items.empty())
        throw graphdiff::MismatchError("split '" + split + "' has no ground-truth items");

    graphdiff::EvalOptions opt;
    opt.sampler = rc.sampler;
    opt.aggregation =
        gt_oracle ? graphdiff::HypothesisAggregation::best_of_n : rc.aggregation;
    opt.pose_scale_mm = ds.norm.pose_scale_mm;
    opt.root_index = ds.norm.root_index;
    opt.procrustes_scale = rc.procrustes_scale;
    opt.num_workers = env_num_workers();

    graphdiff::EvalReport rep = graphdiff::evaluate(ck.model, eval_items, schedule, opt, ds.actions);
    graphdiff::write_eval_table(rep, std::cout);
    if (out_dir) {
        std::ostringstream csv;
        graphdiff::write_eval_csv(rep, csv);
        graphdiff::atomic_write_file(std::filesystem::path(*out_dir) / "report.csv", csv.str());
        std::cout << "report written to " << *out_dir << "/report.csv\n";
    }
    return 0;
}

int cmd_inspect_schedule(const graphdiff::RunConfig& rc, const std::optional<std::string>& out) {
    const graphdiff::NoiseSchedule s = rc.schedule.build();
    if (out) {
        std::ostringstream csv;
        graphdiff::write_schedule_csv(s, csv);
        graphdiff::atomic_write_file(*out, csv.str());
        std::cout << "schedule written to " << *out << "\n";
    } else {
        graphdiff::write_schedule_csv(s, std::cout);
    }
    return 0;
}

int cmd_model_info(const graphdiff::RunConfig& rc, const std::optional<std::string>& ckpt_path,
                   const std::optional<std::string>& dump_affinity) {
    graphdiff::DenoiserModel model =
        ckpt_path ? graphdiff::load_checkpoint(*ckpt_path).model : graphdiff::DenoiserModel(rc.model);
    const auto& cfg = model.config();
    std::cout << "model_dim " << cfg.model_dim << ", num_blocks " << cfg.num_blocks
              << ", time_embed_dim " << cfg.time_embed_dim << ", activation "
              << graphdiff::to_string(cfg.activation) << "\n";
    std::cout << "skeleton: " << (cfg.skeleton.name.empty() ? "custom" : cfg.skeleton.name) << " ("
              << cfg.skeleton.num_joints << " joints, " << cfg.skeleton.edges.size() << " edges)\n";

    std::map<std::string, std::size_t> groups;
    graphdiff::for_each_tensor(const_cast<graphdiff::DenoiserParams&>(model.params()),
                               [&](const std::string& name, graphdiff::Mat& m) {
                                   groups[name.substr(0, name.find('.'))] +=
                                       static_cast<std::size_t>(m.size());
                               });
    for (const auto& [group, count] : groups)
        std::cout << "  " << group << ": " << count << "\n";
    std::cout << "total parameters: " << graphdiff::count_parameters(model.params()) << "\n";

    if (dump_affinity) {
        const graphdiff::Mat a = graphdiff::normalized_affinity(cfg.skeleton).values;
        std::ostringstream csv;
        csv.precision(17);
        for (Eigen::Index i = 0; i < a.rows(); ++i) {
            for (Eigen::Index j = 0; j < a.cols(); ++j)
                csv << a(i, j) << (j + 1 < a.cols() ? "," : "");
            csv << '\n';
        }
        graphdiff::atomic_write_file(*dump_affinity, csv.str());
        std::cout << "normalized affinity written to " << *dump_affinity << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"graphdiff: single-frame 2D-to-3D human pose lifting via graph diffusion"};
    app.require_subcommand(1);

    std::optional<std::string> config_path;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--set", sets, "override a config value, dotted.path=value (repeatable)");
    app.add_option("--seed", seed, "override the top-level seed");

    auto* synth = app.add_subcommand("synth-data", "generate a synthetic pose dataset");
    std::string synth_out;
    synth->add_option("--out", synth_out, "output dataset directory")->required();
    synth->fallthrough();

    auto* train = app.add_subcommand("train", "train a denoiser on a dataset split");
    std::string train_data, train_out, train_split = "train";
    train->add_option("--data", train_data, "dataset directory")->required();
    train->add_option("--out", train_out, "output directory for checkpoint and metrics")->required();
    train->add_option("--split", train_split, "split to train on (default train)");
    train->fallthrough();

    auto* sample = app.add_subcommand("sample", "reconstruct 3D poses for a split");
    std::string sample_ckpt, sample_data, sample_out, sample_split = "test";
    int sample_limit = 0;
    sample->add_option("--checkpoint", sample_ckpt, "checkpoint file")->required();
    sample->add_option("--data", sample_data, "dataset directory")->required();
    sample->add_option("--out", sample_out, "output directory")->required();
    sample->add_option("--split", sample_split, "split to sample (default test)");
    sample->add_option("--limit", sample_limit, "sample only the first N items (0 = all)");
    sample->fallthrough();

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string eval_ckpt, eval_data, eval_split = "test";
    std::optional<std::string> eval_out;
    bool gt_oracle = false;
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval->add_option("--data", eval_data, "dataset directory")->required();
    eval->add_option("--split", eval_split, "split to evaluate (default test)");
    eval->add_option("--out", eval_out, "directory for report.csv");
    eval->add_flag("--gt-oracle", gt_oracle,
                   "score the best hypothesis per item instead of the mean (needs ground truth)");
    eval->fallthrough();

    auto* inspect = app.add_subcommand("inspect-schedule", "dump the noise schedule as CSV");
    std::optional<std::string> inspect_out;
    inspect->add_option("--out", inspect_out, "output CSV file (default stdout)");
    inspect->fallthrough();

    auto* info = app.add_subcommand("model-info", "print model dimensions and parameter counts");
    std::optional<std::string> info_ckpt, info_affinity;
    info->add_option("--checkpoint", info_ckpt, "describe this checkpoint instead of the config");
    info->add_option("--dump-affinity", info_affinity, "write the normalized skeleton affinity CSV");
    info->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        const graphdiff::RunConfig rc = graphdiff::load_run_config(
            config_path ? std::optional<std::filesystem::path>(*config_path) : std::nullopt, sets,
            seed);
        if (synth->parsed()) return cmd_synth(rc, synth_out);
        if (train->parsed()) return cmd_train(rc, train_data, train_split, train_out);
        if (sample->parsed())
            return cmd_sample(rc, sample_ckpt, sample_data, sample_split, sample_out, sample_limit);
        if (eval->parsed()) return cmd_eval(rc, eval_ckpt, eval_data, eval_split, eval_out, gt_oracle);
        if (inspect->parsed()) return cmd_inspect_schedule(rc, inspect_out);
        if (info->parsed()) return cmd_model_info(rc, info_ckpt, info_affinity);
        std::cerr << "no subcommand\n";
        return kExitUsage;
    } catch (const graphdiff::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const graphdiff::MismatchError& e) {
        std::cerr << "mismatch: " << e.what() << "\n";
        return kExitMismatch;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
}
