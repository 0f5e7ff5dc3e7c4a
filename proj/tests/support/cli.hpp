#pragma once

// Runs the wavesep binary as a subprocess and captures its output.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#ifndef WAVESEP_CLI_PATH
#error "WAVESEP_CLI_PATH must point at the wavesep binary"
#endif

namespace wavesep::testing {

namespace fs = std::filesystem;

struct CliResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

inline std::string slurp(const fs::path &p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// A scratch directory, emptied on construction and removed on destruction.
class ScratchDir {
   public:
    explicit ScratchDir(const std::string &name) : path_(fs::temp_directory_path() / ("wavesep_" + name)) {
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir &) = delete;
    ScratchDir &operator=(const ScratchDir &) = delete;
    const fs::path &path() const { return path_; }
    fs::path operator/(const std::string &s) const { return path_ / s; }

   private:
    fs::path path_;
};

inline CliResult run_cli(const std::string &args, const fs::path &scratch) {
    const auto out = scratch / ".cli_stdout", err = scratch / ".cli_stderr";
    const std::string cmd = std::string("\"") + WAVESEP_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    fs::remove(out);
    fs::remove(err);
    return r;
}

inline void write_file(const fs::path &p, const std::string &text) { std::ofstream(p, std::ios::binary) << text; }

// Small enough that generate + train + separate finish in seconds.
inline const char *kTinyConfig = R"({
  "data": {"n_pieces": 8, "min_duration_s": 1.0, "max_duration_s": 2.0, "seed": 3},
  "model": {"depth": 2, "base_filters": 4, "filter_growth": 4, "kernel_down": 5, "kernel_up": 3},
  "train": {"batch_size": 2, "max_steps": 12, "validation_interval": 4, "segment_output": 64, "lr": 0.001},
  "nmf": {"templates": 2, "iterations": 20, "separation_iterations": 20, "pitch_step": 12, "note_duration_s": 0.25}
})";

}  // namespace wavesep::testing
