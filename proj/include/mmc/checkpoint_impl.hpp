#pragma once

#include <atomic>
#include <filesystem>
#include <string>
#include <thread>

#include "mmc/errors.hpp"

namespace mmc {

template <class Writer>
void write_directory_atomically(const std::filesystem::path& dir, Writer&& writer) {
    namespace fs = std::filesystem;
    static std::atomic<unsigned> counter{0};
    const fs::path tmp = dir.parent_path() /
                         (dir.filename().string() + ".tmp" + std::to_string(std::hash<std::thread::id>{}(std::this_thread::get_id()) % 100000) +
                          "_" + std::to_string(counter++));
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    try {
        writer(tmp);
    } catch (...) {
        fs::remove_all(tmp);
        throw;
    }
    std::error_code ec;
    fs::remove_all(dir, ec);
    fs::rename(tmp, dir, ec);
    if (ec) {
        fs::remove_all(tmp);
        throw std::runtime_error("cannot publish " + dir.string() + ": " + ec.message());
    }
}

}  // namespace mmc
