#pragma once

#include "cgpronet/analysis.hpp"
#include "cgpronet/checkpoint.hpp"
#include "cgpronet/error.hpp"
#include "cgpronet/filter.hpp"
#include "cgpronet/graph.hpp"
#include "cgpronet/io.hpp"
#include "cgpronet/linalg.hpp"
#include "cgpronet/model.hpp"
#include "cgpronet/plot.hpp"
#include "cgpronet/random.hpp"
#include "cgpronet/synth.hpp"
#include "cgpronet/train.hpp"
