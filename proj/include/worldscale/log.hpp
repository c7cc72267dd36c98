#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace worldscale::log {

enum class Level { Debug, Info, Warning, Error };

using Sink = std::function<void(Level, std::string_view)>;

/// Replaces the process-wide sink (default: stderr, Info and above).
void set_sink(Sink sink);
void set_min_level(Level level);

void write(Level level, std::string_view message);
inline void info(std::string_view m) { write(Level::Info, m); }
inline void warning(std::string_view m) { write(Level::Warning, m); }
inline void error(std::string_view m) { write(Level::Error, m); }

}  // namespace worldscale::log
