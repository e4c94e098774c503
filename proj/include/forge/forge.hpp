#pragma once

// Umbrella header for the whole factor-mining toolkit.

#include "forge/autodiff.hpp"
#include "forge/batches.hpp"
#include "forge/core.hpp"
#include "forge/factor_train.hpp"
#include "forge/gp.hpp"
#include "forge/ic.hpp"
#include "forge/ic_loss.hpp"
#include "forge/indicators.hpp"
#include "forge/network.hpp"
#include "forge/panel.hpp"
#include "forge/pipeline.hpp"
#include "forge/portfolio.hpp"
#include "forge/sha1.hpp"
#include "forge/synthetic.hpp"
