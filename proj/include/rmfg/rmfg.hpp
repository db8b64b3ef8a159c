#pragma once

// Umbrella header for the numerical library. The command-line layer
// (rmfg/cli.hpp) is separate because it links against OpenSSL.

#include "rmfg/config.hpp"
#include "rmfg/io.hpp"
#include "rmfg/monte_carlo.hpp"
#include "rmfg/selftest.hpp"
#include "rmfg/stability.hpp"
