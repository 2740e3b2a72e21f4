#pragma once

#include "biasaudit/cohort.hpp"
#include "biasaudit/commands.hpp"
#include "biasaudit/config.hpp"
#include "biasaudit/csv.hpp"
#include "biasaudit/error.hpp"
#include "biasaudit/metrics.hpp"
#include "biasaudit/probes.hpp"
#include "biasaudit/projection.hpp"
#include "biasaudit/random.hpp"
#include "biasaudit/sampling.hpp"
#include "biasaudit/stats.hpp"
#include "biasaudit/synth.hpp"
#include "biasaudit/tsne.hpp"
