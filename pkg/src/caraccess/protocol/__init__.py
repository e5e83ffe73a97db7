"""Protocol engines, party state and an in-memory driver."""

from .engines import (ASYMMETRIC_OPS, EPHEMERAL, PERSISTENT, CarExecute, CarOtf, CarSetRoot, CarSetup, CarUpload,
                      Engine, ManufacturerSetRoot, ManufacturerSetup, OwnerDelegate, OwnerSetRoot, OwnerUpload,
                      SellerSetRoot, UserDelegate, UserExecute, UserOtf, decode_action, encode_action, trunc64)
from .runner import (DEFAULT_VIN, Deployment, Frame, exchange, revoke, run_delegate, run_execute, run_execute_otf,
                     run_set_root, run_setup, run_upload_gpk)
from .state import (Authority, CarState, Clock, DelegationToken, OwnerState, Principal, ProtocolAbort, Reason,
                    RevocationError, RevocationList, SessionState, UserState)
