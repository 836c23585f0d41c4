#include "mmc/log.hpp"

#include <atomic>
#include <iostream>
#include <mutex>

namespace mmc {
namespace {

std::mutex g_sink_mutex;
WarningSink g_sink;
std::atomic<std::size_t> g_count{0};

}  // namespace

void warn(const std::string& message) {
    ++g_count;
    std::lock_guard lock(g_sink_mutex);
    if (g_sink) {
        g_sink(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

void set_warning_sink(WarningSink sink) {
    std::lock_guard lock(g_sink_mutex);
    g_sink = std::move(sink);
}

std::size_t warning_count() { return g_count.load(); }

}  // namespace mmc
