#include <CLI11.hpp>
#include <iostream>
#include <vector>

#include "hrf/commands.hpp"

namespace {

using hrf::RunConfig;

struct CommonFlags {
    std::string config_path;
    std::string out_dir;
    std::string checkpoint;
    std::string dataset;
    std::string jitter;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void add_common(CLI::App* app, CommonFlags& f) {
    app->add_option("--config", f.config_path, "flat key-value config file");
    app->add_option("--out", f.out_dir, "output directory");
    app->add_option("--checkpoint", f.checkpoint, "checkpoint file");
    app->add_option("--dataset", f.dataset, "dataset directory");
    app->add_option("--jitter", f.jitter, "stratified jitter: on|off")
        ->check(CLI::IsMember({"on", "off"}));
    app->add_option("--seed", f.seed, "rng seed")->each([&](const std::string&) {
        f.seed_set = true;
    });
}

RunConfig resolve(const CommonFlags& f) {
    RunConfig cfg;
    if (!f.config_path.empty()) hrf::apply_config_file(cfg, f.config_path);
    if (!f.out_dir.empty()) cfg.out_dir = f.out_dir;
    if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
    if (!f.dataset.empty()) cfg.dataset_dir = f.dataset;
    if (!f.jitter.empty()) cfg.jitter = f.jitter == "on";
    if (f.seed_set) cfg.seed = f.seed;
    cfg.validate();
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-image human radiance field pipeline"};
    app.require_subcommand(1);

    CommonFlags gen_f, train_f, render_f, eval_f, sweep_f;
    CLI::App* gen = app.add_subcommand("gen", "generate the synthetic dataset");
    add_common(gen, gen_f);
    CLI::App* train = app.add_subcommand("train", "train on <dataset>/train");
    add_common(train, train_f);
    CLI::App* render =
        app.add_subcommand("render", "render a target frame from an input frame");
    add_common(render, render_f);
    std::vector<int> in_sel, tgt_sel;
    render->add_option("--input", in_sel, "input frame: subject pose view")
        ->expected(3)
        ->required();
    render->add_option("--target", tgt_sel, "target frame: subject pose view")
        ->expected(3)
        ->required();
    CLI::App* eval = app.add_subcommand("eval", "bbox-masked PSNR/SSIM tables");
    add_common(eval, eval_f);
    CLI::App* sweep =
        app.add_subcommand("sweep-views", "12-view input-angle analysis");
    add_common(sweep, sweep_f);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return e.get_exit_code() == 0 ? 0 : hrf::cli::kExitUsage;
    }

    try {
        if (gen->parsed()) {
            hrf::cli::cmd_gen(resolve(gen_f));
        } else if (train->parsed()) {
            hrf::cli::cmd_train(resolve(train_f));
        } else if (render->parsed()) {
            const hrf::cli::FrameSel in{in_sel[0], in_sel[1], in_sel[2]};
            const hrf::cli::FrameSel tgt{tgt_sel[0], tgt_sel[1], tgt_sel[2]};
            const auto out = hrf::cli::cmd_render(resolve(render_f), in, tgt);
            std::cout << out.image_path << '\n' << out.mask_path << '\n';
        } else if (eval->parsed()) {
            const auto res = hrf::cli::cmd_eval(resolve(eval_f));
            std::cout << "novel_view mean_psnr " << res.mean_psnr_view
                      << " mean_ssim " << res.mean_ssim_view << '\n';
            std::cout << "novel_pose mean_psnr " << res.mean_psnr_pose
                      << " mean_ssim " << res.mean_ssim_pose << '\n';
        } else if (sweep->parsed()) {
            const auto res = hrf::cli::cmd_sweep_views(resolve(sweep_f));
            for (std::size_t i = 0; i < res.input_yaw_deg.size(); ++i)
                std::cout << res.input_yaw_deg[i] << ' '
                          << res.mean_psnr_per_input[i] << '\n';
        }
    } catch (const hrf::cli::UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return hrf::cli::kExitUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return hrf::cli::kExitUsage;
    } catch (const hrf::cli::NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return hrf::cli::kExitNumeric;
    } catch (const hrf::cli::DataError& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return hrf::cli::kExitData;
    } catch (const std::exception& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return hrf::cli::kExitData;
    }
    return 0;
}
