#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "climbemu/climbemu.hpp"

using namespace climbemu;

namespace fs = std::filesystem;

namespace {

TrainConfig quick_config()
{
    TrainConfig cfg;
    cfg.fit.n_w = 4;
    cfg.fit.max_iters = 1500;
    cfg.gp.restarts = 2;
    cfg.gp.seed = 5;
    return cfg;
}

const std::vector<Trajectory>& train_set()
{
    static const auto data = [] {
        SyntheticConfig sc;
        sc.n_flights = 30;
        sc.seed = 31;
        return generate_dataset(sc).trajectories;
    }();
    return data;
}

const TrainReport& trained()
{
    static const TrainReport report = train_model(train_set(), quick_config());
    return report;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

int run(const std::string& args)
{
    const std::string cmd = std::string(CLIMBEMU_CLI) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

fs::path scratch_dir(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("climbemu_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

} // namespace

TEST(TrainModel, ProducesConsistentArtifact)
{
    const auto& a = trained().artifact;
    EXPECT_GE(a.n_c(), 1);
    EXPECT_EQ(a.n_c(), a.emulator.n_scores());
    EXPECT_EQ(a.basis.n_w, 4);
    EXPECT_EQ(a.provenance.training_ids.size(), train_set().size());
    EXPECT_EQ(a.provenance.dataset_hash, dataset_hash(train_set()));
    EXPECT_EQ(static_cast<int>(a.sweep.size()), 2 * 4 + 2);
}

TEST(TrainModel, RetrainIsByteIdentical)
{
    const auto again = train_model(train_set(), quick_config());
    EXPECT_EQ(serialize_artifact(again.artifact), serialize_artifact(trained().artifact));
}

TEST(TrainModel, SingleFlight)
{
    const std::vector<Trajectory> one{train_set().front()};
    const auto report = train_model(one, quick_config());
    EXPECT_EQ(report.artifact.n_c(), 1);
}

TEST(Artifact, RoundTripIsBitExact)
{
    const auto& a = trained().artifact;
    const auto text = serialize_artifact(a);
    const auto back = artifact_from_json(nlohmann::json::parse(text));
    EXPECT_EQ(serialize_artifact(back), text);

    const ClimbFeatures x = train_set()[3].features;
    const auto before = Forecaster(a).sample(x, 20, 9);
    const auto after = Forecaster(back).sample(x, 20, 9);
    EXPECT_EQ(before.alpha_samples, after.alpha_samples);
    EXPECT_EQ(before.trajectories, after.trajectories);
    EXPECT_EQ(before.arrival_samples.size(), after.arrival_samples.size());
}

TEST(Artifact, VersionMismatchRejected)
{
    auto j = artifact_to_json(trained().artifact);
    j["format_version"] = artifact_format_version + 1;
    EXPECT_THROW(artifact_from_json(j), DataError);
}

TEST(Forecaster, TrainingBoxAndMeanCurve)
{
    const Forecaster f(trained().artifact);
    const auto x = train_set()[0].features;
    EXPECT_TRUE(f.inside_training_box(x));
    EXPECT_FALSE(f.inside_training_box({500.0, x.f_i, x.v_ias}));
    SamplingOptions opt;
    opt.suppress_variance = true;
    const auto ens = f.sample(x, 1, 1, opt);
    const auto mean = f.mean_curve(x);
    EXPECT_EQ(ens.curves[0].evaluate(ens.grid), mean.evaluate(ens.grid));
}

TEST(EvaluateModel, PopulatesScorecard)
{
    SyntheticConfig sc;
    sc.n_flights = 6;
    sc.seed = 32;
    const auto test = generate_dataset(sc).trajectories;
    EvaluateConfig ec;
    ec.n_mc = 30;
    ec.seed = 2;
    const Forecaster f(trained().artifact);
    const auto res = evaluate_model(f, test, ec);
    ASSERT_EQ(res.scorecard.flights.size(), 6u);
    EXPECT_TRUE(res.overlapping_ids.empty());
    EXPECT_EQ(res.accepted_draws, 6u * 30u);
    for (const auto& s : res.scorecard.flights) {
        EXPECT_TRUE(std::isfinite(s.observed_arrival));
        EXPECT_TRUE(std::isfinite(s.mae));
        EXPECT_TRUE(std::isfinite(s.mae_point_baseline));
        EXPECT_TRUE(std::isfinite(s.crps_prob_baseline));
    }
    EXPECT_TRUE(std::isfinite(res.scorecard.mean_crps));
    EXPECT_TRUE(std::isfinite(res.scorecard.model_calibration.rmsec));
    EXPECT_TRUE(std::isfinite(res.scorecard.baseline_calibration.sharpness));

    const auto again = evaluate_model(f, test, ec);
    std::ostringstream a, b;
    write_scorecard_csv(a, res.scorecard);
    write_scorecard_csv(b, again.scorecard);
    EXPECT_EQ(a.str(), b.str());
}

TEST(EvaluateModel, TrainingSetOverlapIsReported)
{
    EvaluateConfig ec;
    ec.n_mc = 10;
    const std::vector<Trajectory> some(train_set().begin(), train_set().begin() + 2);
    const auto res = evaluate_model(Forecaster(trained().artifact), some, ec);
    EXPECT_EQ(res.overlapping_ids.size(), 2u);
}

TEST(Cli, SynthIsDeterministic)
{
    const auto dir = scratch_dir("synth");
    const auto a = dir / "a.csv";
    const auto b = dir / "b.csv";
    ASSERT_EQ(run("synth --n 100 --seed 7 --out " + a.string()), 0);
    ASSERT_EQ(run("synth --n 100 --seed 7 --out " + b.string()), 0);
    EXPECT_EQ(slurp(a), slurp(b));
    std::ifstream in(a);
    EXPECT_EQ(load_dataset(in).size(), 100u);
}

TEST(Cli, UsageErrorsExitTwo)
{
    const auto dir = scratch_dir("usage");
    EXPECT_EQ(run("synth --n 10 --seed 1 --delta-f-min 120 --delta-f-max 40 --out " + (dir / "x.csv").string()), 2);
    EXPECT_EQ(run("synth --bogus"), 2);
    EXPECT_EQ(run(""), 2);
}

TEST(Cli, MissingInputExitsOne)
{
    const auto dir = scratch_dir("missing");
    EXPECT_EQ(run("train --data " + (dir / "nope.csv").string() + " --out " + (dir / "m.json").string()), 1);
}
