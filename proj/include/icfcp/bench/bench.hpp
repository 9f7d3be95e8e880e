// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "icfcp/bench/compare.hpp"
#include "icfcp/bench/config.hpp"
#include "icfcp/bench/eval.hpp"
#include "icfcp/bench/oracle_check.hpp"
#include "icfcp/bench/presets.hpp"
#include "icfcp/bench/report.hpp"
