#pragma once
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <string>

namespace incr::log {

enum class Level { Debug = 0, Info = 1, Warn = 2, Error = 3 };

// INCR_LOG=debug|info|warn|error, default info. Read once.
inline Level threshold() {
  static Level lv = [] {
    const char* e = std::getenv("INCR_LOG");
    if (!e) return Level::Info;
    if (!std::strcmp(e, "debug")) return Level::Debug;
    if (!std::strcmp(e, "info")) return Level::Info;
    if (!std::strcmp(e, "warn")) return Level::Warn;
    if (!std::strcmp(e, "error")) return Level::Error;
    return Level::Info;
  }();
  return lv;
}

inline void emit(Level lv, const std::string& msg) {
  if (lv < threshold()) return;
  static const char* tag[] = {"debug", "info", "warn", "error"};
  std::fprintf(stderr, "[%s] %s\n", tag[static_cast<int>(lv)], msg.c_str());
}

inline void debug(const std::string& m) { emit(Level::Debug, m); }
inline void info(const std::string& m) { emit(Level::Info, m); }
inline void warn(const std::string& m) { emit(Level::Warn, m); }
inline void error(const std::string& m) { emit(Level::Error, m); }

}  // namespace incr::log
