#pragma once

#define SPATREG_VERSION_MAJOR 0
#define SPATREG_VERSION_MINOR 1
#define SPATREG_VERSION_PATCH 0
#define SPATREG_VERSION "0.1.0"

namespace spatreg {
inline const char* version() { return SPATREG_VERSION; }
} // namespace spatreg
