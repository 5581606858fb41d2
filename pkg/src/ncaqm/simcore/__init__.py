from .engine import DROP_CAUSES, Metrics, SimConfig, Simulator, run
from .medium import Channel, TxOutcome, interferes, schedule_medium
from .packets import ACK, DATA, CodedPacket, DecodingBuffer, Knowledge, NativePacket, PacketFactory
