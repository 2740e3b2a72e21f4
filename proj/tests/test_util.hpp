#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "biasaudit/cohort.hpp"

namespace testutil {

/// Scratch directory removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("biasaudit_" + tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    [[nodiscard]] const std::filesystem::path& path() const { return path_; }
    [[nodiscard]] std::string file(const std::string& name) const { return (path_ / name).string(); }

private:
    std::filesystem::path path_;
};

inline biasaudit::Sample sample(std::string id, std::string patient, biasaudit::Sex sex, std::string race, double age,
                                std::vector<biasaudit::LabelValue> labels = {},
                                biasaudit::Split split = biasaudit::Split::Test) {
    biasaudit::Sample s;
    s.sample_id = std::move(id);
    s.patient_id = std::move(patient);
    s.sex = sex;
    s.race = std::move(race);
    s.age = age;
    s.labels = std::move(labels);
    s.split = split;
    return s;
}

}  // namespace testutil
