#pragma once

#include "dpmpc/dynamics.hpp"
#include "dpmpc/qp.hpp"
#include "dpmpc/ocp.hpp"
#include "dpmpc/solver.hpp"
#include "dpmpc/controller.hpp"
#include "dpmpc/simbench.hpp"
#include "dpmpc/config.hpp"
#include "dpmpc/report.hpp"
