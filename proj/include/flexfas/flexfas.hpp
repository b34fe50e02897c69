#pragma once

#include "flexfas/augment.hpp"
#include "flexfas/autograd.hpp"
#include "flexfas/backbones.hpp"
#include "flexfas/checkpoint.hpp"
#include "flexfas/commands.hpp"
#include "flexfas/config.hpp"
#include "flexfas/core.hpp"
#include "flexfas/efficiency.hpp"
#include "flexfas/error.hpp"
#include "flexfas/fusion.hpp"
#include "flexfas/io.hpp"
#include "flexfas/layers.hpp"
#include "flexfas/manifest.hpp"
#include "flexfas/metrics.hpp"
#include "flexfas/protocols.hpp"
#include "flexfas/report.hpp"
#include "flexfas/synthgen.hpp"
#include "flexfas/tensor.hpp"
#include "flexfas/trainer.hpp"
