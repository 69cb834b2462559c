// Umbrella header.
#pragma once

#include "cli.hpp"
#include "commands.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "field.hpp"
#include "fusion.hpp"
#include "io.hpp"
#include "losses.hpp"
#include "metrics.hpp"
#include "nn.hpp"
#include "registration.hpp"
#include "rng.hpp"
#include "synth.hpp"
#include "tensor.hpp"
#include "train.hpp"
