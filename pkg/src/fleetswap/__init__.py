"""Active-code replacement for a simulated vehicle fleet analytics platform."""

import time

# Observed by the status API and the harness: a hot swap must never change it.
PROCESS_STARTED_AT = time.time()

UNASSIGNED = "unassigned"
