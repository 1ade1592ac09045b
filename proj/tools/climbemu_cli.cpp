// Command-line front end: synth, train, predict, evaluate, sweep-nc.

#include <filesystem>
#include <iostream>
#include <mutex>
#include <string>

#include <CLI11.hpp>

#include "climbemu/climbemu.hpp"

namespace fs = std::filesystem;
using namespace climbemu;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct FitFlags {
    int n_w = 10;
    int n_quad = 512;
    double eta = 0.02;
    int max_iters = 20000;
    double rel_tol = 1e-6;
    int patience = 50;
    double ratio_max = default_ratio_max;
    double dip_tolerance = default_dip_tolerance;
    bool progress = false;

    void add(CLI::App* cmd)
    {
        cmd->add_option("--n-w", n_w, "Fourier order of the weight function")->capture_default_str();
        cmd->add_option("--n-quad", n_quad, "Simpson subintervals on [0,1]")->capture_default_str();
        cmd->add_option("--eta", eta, "Adagrad learning rate")->capture_default_str();
        cmd->add_option("--max-iters", max_iters, "Adagrad iteration cap per flight")->capture_default_str();
        cmd->add_option("--rel-tol", rel_tol, "relative loss improvement stopping threshold")->capture_default_str();
        cmd->add_option("--patience", patience, "iterations in the improvement window")->capture_default_str();
        cmd->add_option("--ratio-max", ratio_max, "bound on epsilon_r / epsilon_L")->capture_default_str();
        cmd->add_option("--dip-tolerance", dip_tolerance, "largest level drop (FL) allowed by screening")
            ->capture_default_str();
        cmd->add_flag("--progress", progress, "per-fit progress lines (id, iter, loss) on stderr");
    }

    TrainConfig config() const
    {
        TrainConfig cfg;
        cfg.fit.n_w = n_w;
        cfg.fit.eta = eta;
        cfg.fit.max_iters = max_iters;
        cfg.fit.rel_tol = rel_tol;
        cfg.fit.patience = patience;
        cfg.quadrature.n_quad = n_quad;
        cfg.ratio_max = ratio_max;
        cfg.dip_tolerance = dip_tolerance;
        try {
            cfg.fit.validate();
            cfg.quadrature.validate();
        } catch (const InvalidArgument& e) {
            throw UsageError(e.what());
        }
        if (!(ratio_max > 1.0))
            throw UsageError("--ratio-max must exceed 1");
        if (progress) {
            auto mutex = std::make_shared<std::mutex>();
            cfg.fit.progress = [mutex](const std::string& id, int iter, double loss) {
                std::lock_guard lock(*mutex);
                std::cerr << id << '\t' << iter << '\t' << csv::format(loss) << '\n';
            };
        }
        cfg.log = [](const std::string& line) { std::cerr << line << '\n'; };
        return cfg;
    }
};

void check_outside_box(const Forecaster& model, const ClimbFeatures& x, const std::string& what)
{
    if (!model.inside_training_box(x))
        std::cerr << "warning: " << what << " lies outside the training feature range; the forecast extrapolates\n";
}

int run_synth(const SyntheticConfig& cfg, const fs::path& out, const fs::path& truth)
{
    try {
        cfg.validate();
    } catch (const InvalidArgument& e) {
        throw UsageError(e.what());
    }
    const auto data = generate_dataset(cfg);
    save_dataset(out, data.trajectories);
    if (!truth.empty())
        csv::write_atomically(truth, [&](std::ostream& os) { write_truth_csv(os, data); });
    std::cout << "flights\t" << data.trajectories.size() << '\n';
    return 0;
}

int run_train(const FitFlags& flags, const fs::path& data, const fs::path& out, const fs::path& sweep,
              std::uint64_t seed, int restarts)
{
    auto cfg = flags.config();
    cfg.gp.seed = seed;
    cfg.gp.restarts = restarts;
    if (restarts < 1)
        throw UsageError("--restarts must be >= 1");
    const auto dataset = load_dataset(data);
    const auto report = train_model(dataset, cfg);
    const auto& art = report.artifact;
    save_artifact(out, art);
    if (!sweep.empty())
        csv::write_atomically(sweep, [&](std::ostream& os) { write_sweep_csv(os, art.sweep); });
    if (!report.screened_out.empty()) {
        std::cerr << "screened out:";
        for (const auto& id : report.screened_out)
            std::cerr << ' ' << id;
        std::cerr << '\n';
    }
    std::cout << "epsilon_L\t" << csv::format(art.epsilon_L) << '\n';
    std::cout << "n_c\t" << art.n_c() << '\n';
    for (std::size_t k = 0; k < art.log_marginal_likelihoods.size(); ++k)
        std::cout << "log_marginal_likelihood\t" << k + 1 << '\t' << csv::format(art.log_marginal_likelihoods[k])
                  << '\n';
    return 0;
}

int run_sweep(const FitFlags& flags, const fs::path& data, const fs::path& out)
{
    const auto r = reduce_dataset(load_dataset(data), flags.config());
    csv::write_atomically(out, [&](std::ostream& os) { write_sweep_csv(os, r.selection.sweep); });
    std::cout << "epsilon_L\t" << csv::format(r.fits.epsilon_L) << '\n';
    std::cout << "n_c\t" << r.selection.n_c << '\n';
    return 0;
}

int run_predict(const fs::path& model_path, const ClimbFeatures& x, std::size_t n_mc, std::uint64_t seed, int levels,
                bool suppress_variance, const fs::path& out_dir)
{
    try {
        x.validate();
    } catch (const DataError& e) {
        throw UsageError(e.what());
    }
    if (n_mc < 1)
        throw UsageError("--n-mc must be >= 1");
    if (levels < 1)
        throw UsageError("--levels must be >= 1");
    const Forecaster model(load_artifact(model_path));
    check_outside_box(model, x, "the requested feature point");
    SamplingOptions opt;
    opt.suppress_variance = suppress_variance;
    const auto ens = model.sample(x, n_mc, seed, opt);
    const double T = model.artifact().horizon.T;

    fs::create_directories(out_dir);
    csv::write_atomically(out_dir / "trajectories.csv", [&](std::ostream& os) {
        os << "sample,t_s,f\n";
        for (std::size_t m = 0; m < ens.size(); ++m)
            for (std::size_t g = 0; g < ens.grid.size(); ++g)
                os << m << ',' << csv::format(ens.grid[g] * T) << ',' << csv::format(ens.trajectories[m][g]) << '\n';
    });
    const auto lv = intermediate_levels(x, levels);
    csv::write_atomically(out_dir / "arrivals.csv", [&](std::ostream& os) {
        os << "sample,level,arrival_s\n";
        for (double level : lv) {
            const auto times = arrival_times_at(ens, level);
            for (std::size_t m = 0; m < times.size(); ++m)
                os << m << ',' << csv::format(level) << ',' << detail::cell(times[m]) << '\n';
        }
    });
    csv::write_atomically(out_dir / "band.csv", [&](std::ostream& os) {
        os << "level,mean_arrival_s,lower_s,upper_s,sd_s,reached,not_reached\n";
        for (double level : lv) {
            const auto times = arrival_times_at(ens, level);
            const auto m = finite_moments(times);
            const bool ok = m.count >= 2 || (suppress_variance && m.count >= 1);
            if (!ok) {
                std::cerr << "warning: fewer than two samples reach level " << csv::format(level) << '\n';
                os << csv::format(level) << ",NA,NA,NA,NA," << m.count << ',' << times.size() - m.count << '\n';
                continue;
            }
            os << csv::format(level) << ',' << csv::format(m.mean) << ',' << csv::format(m.mean - 2.0 * m.sd) << ','
               << csv::format(m.mean + 2.0 * m.sd) << ',' << csv::format(m.sd) << ',' << m.count << ','
               << times.size() - m.count << '\n';
        }
    });
    std::cout << "samples\t" << ens.size() << "\nrejected\t" << ens.rejected_count << '\n';
    return 0;
}

int run_evaluate(const fs::path& model_path, const fs::path& data, std::size_t n_mc, std::uint64_t seed, int levels,
                 const std::string& baseline, double point_bias, const fs::path& out_dir)
{
    if (n_mc < 1)
        throw UsageError("--n-mc must be >= 1");
    if (levels < 1)
        throw UsageError("--levels must be >= 1");
    const Forecaster model(load_artifact(model_path));
    const auto test = load_dataset(data);
    EvaluateConfig cfg;
    cfg.n_mc = n_mc;
    cfg.seed = seed;
    cfg.levels = levels;
    cfg.synthetic_baseline = baseline == "synthetic";
    cfg.point_bias = point_bias;

    std::size_t outside = 0;
    for (const auto& traj : test)
        if (!model.inside_training_box(traj.features))
            ++outside;
    if (outside > 0)
        std::cerr << "warning: " << outside << " test flights lie outside the training feature range\n";

    const auto res = evaluate_model(model, test, cfg);
    if (!res.overlapping_ids.empty())
        std::cerr << "warning: " << res.overlapping_ids.size()
                  << " test flights were also used for training; scores are optimistic\n";
    if (model.artifact().provenance.dataset_hash == dataset_hash(test))
        std::cerr << "warning: the test set is the training set\n";

    const auto& card = res.scorecard;
    fs::create_directories(out_dir);
    csv::write_atomically(out_dir / "scorecard.csv", [&](std::ostream& os) { write_scorecard_csv(os, card); });
    csv::write_atomically(out_dir / "aggregate.csv", [&](std::ostream& os) { write_aggregate_csv(os, card); });
    csv::write_atomically(out_dir / "report.txt", [&](std::ostream& os) { write_scorecard_report(os, card); });
    csv::write_atomically(out_dir / "histograms.csv", [&](std::ostream& os) { write_histogram_csv(os, card); });
    csv::write_atomically(out_dir / "delta_z_samples.csv", [&](std::ostream& os) {
        os << "flight_id,delta_z_fl\n";
        for (const auto& f : card.flights)
            for (double dz : f.delta_z_per_sample)
                os << f.id << ',' << csv::format(dz) << '\n';
    });
    write_scorecard_report(std::cout, card);
    std::cout << "rejected draws: " << res.rejected_draws << " of "
              << res.rejected_draws + res.accepted_draws << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Probabilistic aircraft climb forecasting"};
    app.require_subcommand(1);

    std::uint64_t seed = 0;
    FitFlags fit_flags;

    auto* synth = app.add_subcommand("synth", "generate a synthetic climb dataset");
    SyntheticConfig synth_cfg;
    fs::path synth_out, synth_truth;
    synth->add_option("--n", synth_cfg.n_flights, "number of flights")->capture_default_str();
    synth->add_option("--seed", synth_cfg.seed, "random seed")->capture_default_str();
    synth->add_option("--out", synth_out, "dataset CSV")->required();
    synth->add_option("--truth", synth_truth, "sidecar CSV of noise-free arrival times");
    synth->add_option("--noise-std", synth_cfg.noise_std, "level noise (FL)")->capture_default_str();
    synth->add_option("--radar-dt", synth_cfg.radar_dt, "seconds between radar returns")->capture_default_str();
    synth->add_option("--delta-f-min", synth_cfg.delta_f.lo)->capture_default_str();
    synth->add_option("--delta-f-max", synth_cfg.delta_f.hi)->capture_default_str();
    synth->add_option("--f-i-min", synth_cfg.f_i.lo)->capture_default_str();
    synth->add_option("--f-i-max", synth_cfg.f_i.hi)->capture_default_str();
    synth->add_option("--v-ias-min", synth_cfg.v_ias.lo)->capture_default_str();
    synth->add_option("--v-ias-max", synth_cfg.v_ias.hi)->capture_default_str();

    auto* train = app.add_subcommand("train", "fit the model to a dataset and write a model file");
    fs::path train_data, train_out, train_sweep;
    int restarts = 8;
    train->add_option("--data", train_data, "training dataset CSV")->required();
    train->add_option("--out", train_out, "model JSON")->required();
    train->add_option("--sweep", train_sweep, "CSV of the n_c reconstruction-error sweep");
    train->add_option("--seed", seed, "seed for hyperparameter restarts")->capture_default_str();
    train->add_option("--restarts", restarts, "hyperparameter restarts per score")->capture_default_str();
    fit_flags.add(train);

    auto* sweep = app.add_subcommand("sweep-nc", "reconstruction error ratio for every n_c");
    fs::path sweep_data, sweep_out;
    sweep->add_option("--data", sweep_data, "dataset CSV")->required();
    sweep->add_option("--out", sweep_out, "sweep CSV")->required();
    FitFlags sweep_flags;
    sweep_flags.add(sweep);

    auto* predict = app.add_subcommand("predict", "sample climb forecasts for one feature point");
    fs::path predict_model, predict_out;
    ClimbFeatures x;
    std::size_t n_mc = 100;
    int levels = default_calibration_levels;
    bool suppress = false;
    predict->add_option("--model", predict_model, "model JSON")->required();
    predict->add_option("--delta-f", x.delta_f, "requested level change (FL)")->required();
    predict->add_option("--f-i", x.f_i, "initial flight level (FL)")->required();
    predict->add_option("--v-ias", x.v_ias, "indicated airspeed (kn)")->required();
    predict->add_option("--n-mc", n_mc, "posterior samples")->capture_default_str();
    predict->add_option("--seed", seed, "sampling seed")->capture_default_str();
    predict->add_option("--levels", levels, "intermediate levels in the band")->capture_default_str();
    predict->add_flag("--suppress-variance", suppress, "draw every score at its posterior mean");
    predict->add_option("--out-dir", predict_out, "directory for trajectories.csv, arrivals.csv, band.csv")
        ->required();

    auto* evaluate = app.add_subcommand("evaluate", "score a model on a test dataset");
    fs::path eval_model, eval_data, eval_out;
    std::string baseline = "synthetic";
    double point_bias = default_point_bias;
    evaluate->add_option("--model", eval_model, "model JSON")->required();
    evaluate->add_option("--data", eval_data, "test dataset CSV")->required();
    evaluate->add_option("--n-mc", n_mc, "posterior samples per flight")->capture_default_str();
    evaluate->add_option("--seed", seed, "sampling seed")->capture_default_str();
    evaluate->add_option("--levels", levels, "intermediate levels for calibration")->capture_default_str();
    evaluate->add_option("--baseline", baseline, "reference forecasts: synthetic or none")
        ->check(CLI::IsMember({"synthetic", "none"}))
        ->capture_default_str();
    evaluate->add_option("--point-bias", point_bias, "rate bias of the point baseline")->capture_default_str();
    evaluate->add_option("--out-dir", eval_out, "directory for the scorecard files")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*synth)
            return run_synth(synth_cfg, synth_out, synth_truth);
        if (*train)
            return run_train(fit_flags, train_data, train_out, train_sweep, seed, restarts);
        if (*sweep)
            return run_sweep(sweep_flags, sweep_data, sweep_out);
        if (*predict)
            return run_predict(predict_model, x, n_mc, seed, levels, suppress, predict_out);
        if (*evaluate)
            return run_evaluate(eval_model, eval_data, n_mc, seed, levels, baseline, point_bias, eval_out);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
