#pragma once

// Umbrella header: pulls in the whole training laboratory.

#include "bam/auxvar.hpp"
#include "bam/backprop.hpp"
#include "bam/commands.hpp"
#include "bam/config.hpp"
#include "bam/data.hpp"
#include "bam/errors.hpp"
#include "bam/loss.hpp"
#include "bam/matrix.hpp"
#include "bam/metrics.hpp"
#include "bam/model.hpp"
#include "bam/optim.hpp"
#include "bam/pipeline.hpp"
#include "bam/rng.hpp"
#include "bam/text.hpp"
