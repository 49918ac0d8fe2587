#pragma once

#include "cascade/attack.hpp"
#include "cascade/commands.hpp"
#include "cascade/config.hpp"
#include "cascade/mat.hpp"
#include "cascade/model.hpp"
#include "cascade/netsim.hpp"
#include "cascade/protocol.hpp"
#include "cascade/report.hpp"
#include "cascade/rng.hpp"
#include "cascade/sharding.hpp"
