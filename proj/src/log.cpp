#include "worldscale/log.hpp"

#include <cstdio>
#include <mutex>

namespace worldscale::log {

namespace {

struct State {
  std::mutex mutex;
  Level min_level = Level::Info;
  Sink sink;
};

State& state() {
  static State s;
  return s;
}

const char* tag(Level level) {
  switch (level) {
    case Level::Debug: return "debug";
    case Level::Info: return "info";
    case Level::Warning: return "warning";
    case Level::Error: return "error";
  }
  return "info";
}

}  // namespace

void set_sink(Sink sink) {
  std::lock_guard lock(state().mutex);
  state().sink = std::move(sink);
}

void set_min_level(Level level) {
  std::lock_guard lock(state().mutex);
  state().min_level = level;
}

void write(Level level, std::string_view message) {
  auto& s = state();
  std::lock_guard lock(s.mutex);
  if (level < s.min_level) return;
  if (s.sink) {
    s.sink(level, message);
    return;
  }
  std::fprintf(stderr, "[%s] %.*s\n", tag(level), static_cast<int>(message.size()), message.data());
}

}  // namespace worldscale::log
