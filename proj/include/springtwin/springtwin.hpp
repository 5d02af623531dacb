#pragma once

// Everything except the network server (springtwin/server.hpp needs Boost).
#include "springtwin/adjoint.hpp"
#include "springtwin/checkpoint.hpp"
#include "springtwin/core.hpp"
#include "springtwin/losses.hpp"
#include "springtwin/material.hpp"
#include "springtwin/metrics.hpp"
#include "springtwin/model.hpp"
#include "springtwin/predictor.hpp"
#include "springtwin/scene.hpp"
#include "springtwin/service.hpp"
#include "springtwin/sim.hpp"
#include "springtwin/spatial.hpp"
#include "springtwin/synthetic.hpp"
#include "springtwin/topology.hpp"
#include "springtwin/training.hpp"
