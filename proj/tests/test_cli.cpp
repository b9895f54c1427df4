#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <nlohmann/json.hpp>

namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "seranet_test_cli";
const std::string kSmall = " --reg-channels 4 --unet-channels 2 --lstm-channels 4 --batch 4 --epochs 1";

int run(const std::string& args, std::string* output = nullptr) {
    const auto log = kRoot / "last.log";
    const std::string cmd = std::string("\"") + SERANET_CLI_PATH + "\" " + args + " > \"" + log.string() + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    if (output) {
        std::ifstream in(log);
        output->assign(std::istreambuf_iterator<char>(in), {});
    }
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string path(const std::string& name) { return (kRoot / name).string(); }

// One shared tiny dataset for every case.
struct Fixture {
    Fixture() {
        fs::remove_all(kRoot);
        fs::create_directories(kRoot);
        REQUIRE(run("gen-data --out " + path("data") +
                    " --brains 2 --test-brains 1 --slices 2 --height 32 --width 32 --rate 0.5 --seed 2") == 0);
    }
    ~Fixture() { fs::remove_all(kRoot); }
};

}  // namespace

TEST_CASE_FIXTURE(Fixture, "gen-data reports and records its configuration") {
    const auto manifest = nlohmann::json::parse(std::ifstream(kRoot / "data" / "manifest.json"));
    CHECK(manifest.at("train_records").get<int>() == 4);
    CHECK(manifest.at("test_records").get<int>() == 2);
    CHECK(manifest.at("noise_level").get<double>() == 0.1);

    CHECK(run("gen-data --out " + path("noisy") + " --brains 1 --test-brains 0 --slices 1 --height 32 --width 32 "
              "--rate 0.5 --noise 0.2") == 0);
    const auto noisy = nlohmann::json::parse(std::ifstream(kRoot / "noisy" / "manifest.json"));
    CHECK(noisy.at("noise_level").get<double>() == 0.2);
}

TEST_CASE_FIXTURE(Fixture, "usage errors exit with 2 before any work") {
    std::string out;
    CHECK(run("", &out) == 2);
    CHECK(run("frobnicate", &out) == 2);
    CHECK(run("train --data " + path("data") + " --out " + path("r") + " --model seranet --blocks 1", &out) == 2);
    CHECK(out.find("two reconstruction blocks") != std::string::npos);
    CHECK_FALSE(fs::exists(kRoot / "r"));
    CHECK(run("train --data " + path("data") + " --out " + path("r") + " --model unet", &out) == 2);
    CHECK(run("train --data " + path("data") + " --out " + path("r") + " --model one_step --loss ce_l2", &out) == 2);
    CHECK(run("train --data " + path("data") + " --out " + path("r") + " --noise 0.2", &out) == 2);
    CHECK(out.find("noise") != std::string::npos);
    CHECK(run("train --data " + path("nothing") + " --out " + path("r"), &out) == 2);
    CHECK(run("gen-data --out " + path("g") + " --width 40 --rate 0.3", &out) == 2);
    CHECK(run("--help", &out) == 0);
}

TEST_CASE_FIXTURE(Fixture, "existing outputs need --force") {
    CHECK(run("gen-data --out " + path("data") + " --brains 1 --slices 1 --height 32 --width 32 --rate 0.5") == 2);
    const auto train = "train --data " + path("data") + " --out " + path("run") + kSmall;
    CHECK(run(train) == 0);
    CHECK(run(train) == 2);
    CHECK(run(train + " --force") == 0);
}

TEST_CASE_FIXTURE(Fixture, "runtime failures exit with 1") {
    fs::create_directories(kRoot / "broken");
    std::ofstream(kRoot / "broken" / "manifest.json") << "{ not json";
    CHECK(run("train --data " + path("broken") + " --out " + path("r") + kSmall) == 1);
}

TEST_CASE_FIXTURE(Fixture, "two-step logs both phases and eval checks the checkpoint config") {
    std::string out;
    REQUIRE(run("train --data " + path("data") + " --out " + path("ts") + " --model twostep --blocks 2" + kSmall,
                &out) == 0);
    CHECK(out.find("phase 1/2") != std::string::npos);
    CHECK(out.find("phase 2/2") != std::string::npos);

    CHECK(run("eval --data " + path("data") + " --run " + path("ts") + " --model joint --blocks 3", &out) == 2);
    CHECK(out.find("model_kind") != std::string::npos);
    CHECK(out.find("n_blocks") != std::string::npos);

    std::string a, b;
    CHECK(run("eval --data " + path("data") + " --run " + path("ts") + " --model two_step", &a) == 0);
    CHECK(run("eval --data " + path("data") + " --run " + path("ts"), &b) == 0);
    CHECK(a == b);
}

TEST_CASE_FIXTURE(Fixture, "config file supplies flags and the command line overrides them") {
    std::ofstream(kRoot / "cfg.toml") << "[train]\nepochs = 1\nmodel = \"joint\"\nblocks = 3\nreg-channels = 4\n"
                                         "unet-channels = 2\nlstm-channels = 4\n";
    REQUIRE(run("--config " + path("cfg.toml") + " train --data " + path("data") + " --out " + path("cfgrun") +
                " --blocks 1") == 0);
    const auto m = nlohmann::json::parse(std::ifstream(kRoot / "cfgrun" / "metrics.json"));
    CHECK(m.at("model").at("model_kind") == "joint");
    CHECK(m.at("model").at("n_blocks") == 1);
    CHECK(m.at("train").at("max_epochs") == 1);
}

TEST_CASE_FIXTURE(Fixture, "compare lists missing runs and still prints the table") {
    REQUIRE(run("train --data " + path("data") + " --out " + path("j") + " --model joint" + kSmall) == 0);
    std::string out;
    CHECK(run("compare --runs " + path("j") + " " + path("absent") + " --out " + path("cmp"), &out) == 0);
    CHECK(out.find("Joint-2") != std::string::npos);
    CHECK(out.find("missing runs") != std::string::npos);
    CHECK(out.find("absent") != std::string::npos);
    CHECK(fs::exists(kRoot / "cmp" / "compare.txt"));
}

TEST_CASE_FIXTURE(Fixture, "sweep-blocks covers each model's block range") {
    REQUIRE(run("sweep-blocks --data " + path("data") + " --out " + path("sw") +
                " --n-max 2 --types A --models joint seranet" + kSmall) == 0);
    std::ifstream csv(kRoot / "sw" / "sweep.csv");
    const std::string text((std::istreambuf_iterator<char>(csv)), {});
    CHECK(text.find("joint,A,1,") != std::string::npos);
    CHECK(text.find("joint,A,2,") != std::string::npos);
    CHECK(text.find("seranet,A,2,") != std::string::npos);
    CHECK(text.find("seranet,A,1,") == std::string::npos);
    CHECK(fs::exists(kRoot / "sw" / "sweep.svg"));
}
