#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pseudoblur {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigKey {
    std::string section;
    std::string key;
    std::string default_value;
    std::string description; // includes the pipeline stage the key feeds
};

// Every tunable constant is a [section] key=value entry with a pinned
// default. Unknown keys are rejected; any key can be overridden through the
// environment as PSEUDOBLUR_<SECTION>_<KEY>.
inline const std::vector<ConfigKey>& config_registry() {
    static const std::vector<ConfigKey> keys = {
        {"data", "height", "64", "image height in px (dataset synthesis)"},
        {"data", "width", "64", "image width in px (dataset synthesis)"},
        {"data", "frames", "7", "frames averaged into one blur (dataset synthesis)"},
        {"data", "max_translation", "4", "max background shift px/frame (dataset synthesis)"},
        {"data", "n_pairs", "200", "pair count (dataset synthesis)"},
        {"data", "holdout", "40", "pairs reserved for metrics (all training stages)"},
        {"model", "gen_width", "8", "generator base channel width (all stages)"},
        {"model", "disc_width", "8", "discriminator base channel width (GAN stages)"},
        {"model", "res_blocks", "1", "generator residual block count (all stages)"},
        {"model", "edge_tau", "0.05", "edge-difference threshold tau (prior extraction)"},
        {"model", "maxpool_k", "7", "hole-filling max-pool kernel (prior extraction)"},
        {"model", "line_thickness", "3", "skeleton line thickness px (prior extraction)"},
        {"train", "seed", "1", "root RNG seed (all training stages)"},
        {"train", "steps", "600", "optimizer steps (initial deblurring / fine-tune)"},
        {"train", "batch", "2", "mini-batch size (initial deblurring & reblurring)"},
        {"train", "lr", "1e-4", "ADAM learning rate (initial deblurring & reblurring)"},
        {"train", "clip_norm", "10", "global gradient-norm clip (all stages)"},
        {"train", "patch", "0", "training patch size, 0 = full image (GAN stages)"},
        {"train", "finetune_reblur", "0", "1 = fine-tune with reblurred supervision (deblur stage)"},
        {"train", "reblur_steps_i", "60", "phase (i) steps on sharp inputs (reblurring)"},
        {"train", "reblur_steps_ii", "120", "phase (ii) steps on deblurred inputs (reblurring)"},
        {"train", "reblur_steps_iii", "120", "phase (iii) steps with region priors (reblurring)"},
        {"meta", "outer_steps", "300", "outer ADAM steps (meta-transfer)"},
        {"meta", "tasks_train", "4", "task-train count per outer step (meta-transfer)"},
        {"meta", "tasks_test", "4", "task-test count per outer step (meta-transfer)"},
        {"meta", "alpha", "1e-2", "inner gradient-descent rate (meta-transfer & meta-test)"},
        {"meta", "beta", "1e-4", "outer ADAM rate (meta-transfer)"},
        {"meta", "adapt_n", "1", "self-adaptation update count n (meta-test)"},
        {"meta", "second_order", "0", "1 = exact second-order outer gradient (meta-transfer)"},
    };
    return keys;
}

class Config {
public:
    Config() {
        for (const auto& k : config_registry()) values_[k.section + "." + k.key] = k.default_value;
        apply_env();
    }

    static Config from_file(const std::string& path) {
        Config cfg;
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot read config " + path);
        std::string line, section;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            std::string s = trim(line);
            if (s.empty() || s[0] == '#' || s[0] == ';') continue;
            if (s.front() == '[' && s.back() == ']') {
                section = trim(s.substr(1, s.size() - 2));
                continue;
            }
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key=value");
            std::string key = trim(s.substr(0, eq));
            std::string value = trim(s.substr(eq + 1));
            cfg.set(section + "." + key, value);
        }
        cfg.apply_env(); // environment still wins over the file
        return cfg;
    }

    void set(const std::string& dotted, const std::string& value) {
        if (!values_.count(dotted)) throw ConfigError("unknown config key '" + dotted + "'");
        values_[dotted] = value;
    }

    const std::string& raw(const std::string& dotted) const {
        auto it = values_.find(dotted);
        if (it == values_.end()) throw ConfigError("unknown config key '" + dotted + "'");
        return it->second;
    }

    double get_double(const std::string& dotted) const {
        const std::string& s = raw(dotted);
        try {
            std::size_t pos = 0;
            double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument("");
            return v;
        } catch (...) {
            throw ConfigError("config key '" + dotted + "' is not a number: " + s);
        }
    }

    int get_int(const std::string& dotted) const {
        double v = get_double(dotted);
        int i = static_cast<int>(v);
        if (static_cast<double>(i) != v)
            throw ConfigError("config key '" + dotted + "' is not an integer");
        return i;
    }

    std::uint64_t get_u64(const std::string& dotted) const {
        const std::string& s = raw(dotted);
        try {
            return std::stoull(s);
        } catch (...) {
            throw ConfigError("config key '" + dotted + "' is not an unsigned integer: " + s);
        }
    }

    bool get_bool(const std::string& dotted) const { return get_int(dotted) != 0; }

    // Effective configuration in file format; echoed into run reports.
    std::string echo() const {
        std::ostringstream out;
        std::string current;
        for (const auto& k : config_registry()) {
            if (k.section != current) {
                if (!current.empty()) out << "\n";
                out << "[" << k.section << "]\n";
                current = k.section;
            }
            out << k.key << " = " << values_.at(k.section + "." + k.key) << "\n";
        }
        return out.str();
    }

    static std::string help_text() {
        std::ostringstream out;
        out << "Config keys ([section] key, default, role):\n";
        for (const auto& k : config_registry())
            out << "  [" << k.section << "] " << k.key << " = " << k.default_value << "\n      "
                << k.description << "\n";
        out << "Environment override: PSEUDOBLUR_<SECTION>_<KEY>=value\n";
        return out.str();
    }

private:
    static std::string trim(const std::string& s) {
        std::size_t a = 0, b = s.size();
        while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
        return s.substr(a, b - a);
    }

    void apply_env() {
        for (const auto& k : config_registry()) {
            std::string env_name = "PSEUDOBLUR_" + k.section + "_" + k.key;
            std::transform(env_name.begin(), env_name.end(), env_name.begin(),
                           [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
            if (const char* v = std::getenv(env_name.c_str()))
                values_[k.section + "." + k.key] = v;
        }
    }

    std::map<std::string, std::string> values_;
};

} // namespace pseudoblur
